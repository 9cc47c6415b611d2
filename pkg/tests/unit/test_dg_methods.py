#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Tests for the domain generalization objectives."""

import itertools
import math
import unittest

import numpy as np
from scenario import random_batch_arrays  # pylint: disable=import-error

from dg_methods import (
    DGConfig,
    DGMethod,
    DomainBatch,
    GroupWeights,
    Method,
    MMDKernel,
    MultiDomainBatch,
    VirtualBatch,
    coral_cov,
    coral_loss,
    coral_total,
    dann_loss,
    dann_scale,
    dann_terms,
    ddc_loss,
    erm_loss,
    group_dro_step,
    group_losses,
    median_bandwidth,
    mixup_batch,
    mixup_loss,
    mmd,
    mmd_squared,
    pairwise_mmd_penalty,
    parse_method,
    representation_alignment,
    rsc_drop_count,
    rsc_mask,
    rsc_step,
    update_group_weights,
)
from exceptions import ConfigurationError, ContractError, DimensionError, InputError
from models import DomainHead, Linear, MLPModel, domain_head_forward, domain_head_init, mlp_init
from tensor_core import Tensor, finite_diff_check, grad, no_grad, softmax_cross_entropy

FD_TOLERANCE = 1e-6


def _batch(seed: int = 0, rows: int = 8, width: int = 5, domains: int = 2) -> MultiDomainBatch:
    """Random labelled batch split evenly over the domains."""
    return MultiDomainBatch.from_arrays(*random_batch_arrays(seed, rows, width, domains))


def _smooth_model(width: int = 5, seed: int = 0) -> MLPModel:
    """Small sigmoid network, free of kinks for finite differences."""
    return mlp_init(width, [4], 3, seed, activation="sigmoid")


def _numeric_gradient(function, tensor: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function with respect to a parameter."""
    numeric = np.zeros_like(tensor.data)
    with no_grad():
        for index in np.ndindex(*tensor.shape):
            original = tensor.data[index]
            tensor.data[index] = original + eps
            upper = function().item()
            tensor.data[index] = original - eps
            lower = function().item()
            tensor.data[index] = original
            numeric[index] = (upper - lower) / (2.0 * eps)
    return numeric


def _params(model) -> list:
    """Parameter tensors of a model, in declaration order."""
    return [tensor for _, tensor in model.parameters()]


def _assert_finite_differences(test: unittest.TestCase, model: MLPModel, loss) -> None:
    """Check every parameter of the model against central differences of loss()."""
    for name, tensor in model.parameters():
        with test.subTest(parameter=name):
            error = finite_diff_check(lambda _, f=loss: f(), tensor)

            test.assertLess(error, FD_TOLERANCE)


class TestERM(unittest.TestCase):
    """Empirical risk minimization tests."""

    def test_matches_concatenated_batch(self):
        """
        arrange: given a batch over two domains
        act: compute the ERM loss
        assert: the loss equals the cross-entropy of the concatenated batch exactly.
        """
        batch, model = _batch(), _smooth_model()

        loss = erm_loss(batch, model)

        _, logits = model.forward(Tensor(batch.features))
        self.assertEqual(loss.item(), softmax_cross_entropy(logits, batch.labels).item())

    def test_uniform_and_saturated_logits(self):
        """
        arrange: given a network with a zero output layer, then one with a saturated correct logit
        act: compute the ERM loss
        assert: the loss is ln 3 and then close to 0.
        """
        batch, model = _batch(), _smooth_model()
        model.layers[-1].weight.data[...] = 0.0
        model.layers[-1].bias.data[...] = 0.0

        self.assertAlmostEqual(erm_loss(batch, model).item(), math.log(3), delta=1e-12)

        model.layers[-1].bias.data[...] = [60.0, 0.0, 0.0]
        single = MultiDomainBatch((DomainBatch(np.zeros((1, 5)), np.eye(3)[[0]], 0),))
        self.assertLess(erm_loss(single, model).item(), 1e-20)

    def test_empty_batch(self):
        """
        arrange: given a batch without rows
        act: compute the ERM loss
        assert: a contract error is raised.
        """
        empty = MultiDomainBatch(())

        with self.assertRaises(ContractError):
            erm_loss(empty, _smooth_model())

    def test_batch_ordering_checked(self):
        """
        arrange: given sub-batches in descending and repeated domain order
        act: build the batch
        assert: a contract error is raised.
        """
        part = DomainBatch(np.zeros((1, 2)), np.eye(3)[[0]], 1)
        other = DomainBatch(np.zeros((1, 2)), np.eye(3)[[0]], 0)

        with self.assertRaises(ContractError):
            MultiDomainBatch((part, other))
        with self.assertRaises(ContractError):
            MultiDomainBatch((part, part))

    def test_finite_differences(self):
        """
        arrange: given a smooth network and a batch
        act: compare analytic and numeric gradients of the ERM loss
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(), _smooth_model()

        _assert_finite_differences(self, model, lambda: erm_loss(batch, model))


class TestMixup(unittest.TestCase):
    """Mixup tests."""

    def test_unit_coefficient_is_identity(self):
        """
        arrange: given a batch and a forced coefficient of 1
        act: build the virtual batch and its loss
        assert: the batch is unchanged and the loss equals ERM exactly.
        """
        batch, model = _batch(), _smooth_model()

        virtual = mixup_batch(batch, 0.2, np.random.default_rng(0), lam=1.0)

        np.testing.assert_array_equal(virtual.features, batch.features)
        np.testing.assert_array_equal(virtual.soft_labels, batch.labels)
        self.assertEqual(mixup_loss(virtual, model).item(), erm_loss(batch, model).item())

    def test_hand_interpolation(self):
        """
        arrange: given rows (1, 0) of class 0 and (0, 1) of class 1 mixed with each other
        act: interpolate with a coefficient of 0.25
        assert: the first virtual row is (0.25, 0.75) with label (0.25, 0.75, 0).
        """
        batch = MultiDomainBatch.from_arrays(np.eye(2), [0, 1], [0, 1])

        virtual = mixup_batch(batch, 0.2, np.random.default_rng(0), lam=0.25, partners=[1, 0])

        np.testing.assert_allclose(virtual.features[0], [0.25, 0.75])
        np.testing.assert_allclose(virtual.soft_labels[0], [0.25, 0.75, 0.0])

    def test_coefficient_mean(self):
        """
        arrange: given 10,000 rows and alpha = 0.2
        act: draw the mixing coefficients
        assert: their mean is within 0.02 of 0.5.
        """
        rows = 10_000
        batch = MultiDomainBatch.from_arrays(np.zeros((rows, 1)), np.arange(rows) % 3, [0] * rows)

        virtual = mixup_batch(batch, 0.2, np.random.default_rng(12))

        self.assertAlmostEqual(float(virtual.lam.mean()), 0.5, delta=0.02)
        self.assertTrue(np.all((virtual.lam >= 0.0) & (virtual.lam <= 1.0)))

    def test_half_mix_is_average_of_losses(self):
        """
        arrange: given a virtual batch with coefficient 0.5
        act: compute the Mixup loss
        assert: it equals the mean of the cross-entropies against both parents' labels.
        """
        batch, model = _batch(), _smooth_model()
        virtual = mixup_batch(batch, 0.2, np.random.default_rng(1), lam=0.5)

        loss = mixup_loss(virtual, model).item()

        _, logits = model.forward(Tensor(virtual.features))
        first = softmax_cross_entropy(logits, batch.labels).item()
        second = softmax_cross_entropy(logits, batch.labels[virtual.partners]).item()
        self.assertAlmostEqual(loss, 0.5 * first + 0.5 * second, delta=1e-12)

    def test_uniform_soft_labels(self):
        """
        arrange: given uniform soft labels and a zero output layer
        act: compute the Mixup loss
        assert: the loss is ln 3.
        """
        model = _smooth_model()
        model.layers[-1].weight.data[...] = 0.0
        model.layers[-1].bias.data[...] = 0.0
        virtual = VirtualBatch(
            features=np.ones((4, 5)),
            soft_labels=np.full((4, 3), 1.0 / 3.0),
            lam=np.full(4, 0.5),
            partners=np.arange(4),
        )

        self.assertAlmostEqual(mixup_loss(virtual, model).item(), math.log(3), delta=1e-12)

    def test_needs_two_rows(self):
        """
        arrange: given a single-row batch and an invalid coefficient
        act: build the virtual batch
        assert: a contract error and a configuration error are raised.
        """
        single = MultiDomainBatch.from_arrays(np.ones((1, 2)), [0], [0])

        with self.assertRaises(ContractError):
            mixup_batch(single, 0.2, np.random.default_rng(0))
        with self.assertRaises(ConfigurationError):
            mixup_batch(_batch(), 0.2, np.random.default_rng(0), lam=1.5)

    def test_finite_differences(self):
        """
        arrange: given a fixed virtual batch
        act: compare analytic and numeric gradients of the Mixup loss
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(1), _smooth_model()
        virtual = mixup_batch(batch, 0.2, np.random.default_rng(2))

        _assert_finite_differences(self, model, lambda: mixup_loss(virtual, model))


class TestGroupDRO(unittest.TestCase):
    """Group distributionally robust optimization tests."""

    def test_hand_update(self):
        """
        arrange: given losses (2, 0), uniform weights and a step of ln 2
        act: update the weights
        assert: the weights become (0.8, 0.2).
        """
        updated = update_group_weights(GroupWeights.uniform(2), {0: 2.0, 1: 0.0}, math.log(2))

        np.testing.assert_allclose(updated.q, [0.8, 0.2], atol=1e-12)

    def test_equal_losses_keep_weights(self):
        """
        arrange: given equal group losses and uniform weights
        act: update the weights
        assert: the weights stay uniform.
        """
        updated = update_group_weights(GroupWeights.uniform(3), {0: 1.3, 1: 1.3, 2: 1.3}, 0.5)

        np.testing.assert_allclose(updated.q, np.full(3, 1.0 / 3.0), atol=1e-15)

    def test_weights_stay_on_simplex(self):
        """
        arrange: given 1000 random loss vectors
        act: apply the update after each
        assert: the weights remain nonnegative and sum to one.
        """
        rng = np.random.default_rng(0)
        weights = GroupWeights.uniform(4)

        for _ in range(1000):
            losses = dict(enumerate(rng.exponential(2.0, size=4)))
            weights = update_group_weights(weights, losses, 0.05)

            self.assertTrue(np.all(weights.q >= 0.0))
            self.assertAlmostEqual(float(weights.q.sum()), 1.0, delta=1e-12)

    def test_exact_max_ties(self):
        """
        arrange: given two groups tied for the worst loss
        act: update with the exact maximum
        assert: all weight goes to the lower index.
        """
        updated = update_group_weights(
            GroupWeights.uniform(3), {0: 0.1, 1: 2.0, 2: 2.0}, 0.01, exact_max=True
        )

        np.testing.assert_array_equal(updated.q, [0.0, 1.0, 0.0])

    def test_invalid_updates(self):
        """
        arrange: given a negative step size and an unknown group
        act: update the weights
        assert: a configuration error and a contract error are raised.
        """
        with self.assertRaises(ConfigurationError):
            update_group_weights(GroupWeights.uniform(2), {0: 1.0}, -0.1)
        with self.assertRaises(ContractError):
            update_group_weights(GroupWeights.uniform(2), {2: 1.0}, 0.1)

    def test_zero_step_is_mean_of_groups(self):
        """
        arrange: given equal group sizes, uniform weights and a zero step
        act: take the group DRO step
        assert: the loss is the mean of the group losses.
        """
        batch, model = _batch(rows=9, domains=3), _smooth_model()

        loss, weights = group_dro_step(batch, model, GroupWeights.uniform(3), 0.0)

        expected = np.mean([value.item() for value in group_losses(batch, model).values()])
        self.assertAlmostEqual(loss.item(), expected, delta=1e-12)
        np.testing.assert_allclose(weights.q, np.full(3, 1.0 / 3.0))

    def test_missing_group_renormalizes(self):
        """
        arrange: given weights over three groups and a batch holding groups 0 and 2
        act: take the group DRO step with a zero step
        assert: the loss weights the present groups by their renormalized weights.
        """
        features, labels, _ = random_batch_arrays(3, rows=6, width=5)
        batch = MultiDomainBatch.from_arrays(features, labels, [0, 0, 0, 2, 2, 2])
        model = _smooth_model()

        loss, weights = group_dro_step(batch, model, GroupWeights(np.array([0.5, 0.25, 0.25])), 0)

        per_group = group_losses(batch, model)
        expected = (0.5 * per_group[0].item() + 0.25 * per_group[2].item()) / 0.75
        self.assertAlmostEqual(loss.item(), expected, delta=1e-12)
        np.testing.assert_allclose(weights.q, [0.5, 0.25, 0.25])

    def test_finite_differences(self):
        """
        arrange: given fixed group weights and a zero step
        act: compare analytic and numeric gradients of the group DRO loss
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(2), _smooth_model()
        fixed = GroupWeights(np.array([0.7, 0.3]))

        _assert_finite_differences(
            self, model, lambda: group_dro_step(batch, model, fixed, 0.0)[0]
        )


class TestDANN(unittest.TestCase):
    """Domain-adversarial training tests."""

    def test_zero_scale_matches_erm(self):
        """
        arrange: given a reversal scale of 0
        act: take the gradients of the adversarial and the ERM losses
        assert: the network gradients are identical while the head still gets gradients.
        """
        batch, model = _batch(), _smooth_model()
        head = domain_head_init(4, 2, seed=1)

        adversarial = grad(dann_loss(batch, model, head, 0.0), _params(model) + _params(head))
        plain = grad(erm_loss(batch, model), _params(model))

        for left, right in zip(adversarial, plain):
            np.testing.assert_array_equal(left, right)
        self.assertTrue(any(np.any(g != 0.0) for g in adversarial[len(plain) :]))

    def test_zero_head_loss(self):
        """
        arrange: given a zero domain head over four domains
        act: compute the domain loss
        assert: the loss is ln 4.
        """
        batch, model = _batch(rows=8, domains=4), _smooth_model()
        head = DomainHead(
            [Linear(Tensor(np.zeros((4, 4)), True), Tensor(np.zeros(4), True))]
        )

        _, domain_loss = dann_terms(batch, model, head, 1.0)

        self.assertAlmostEqual(domain_loss.item(), math.log(4), delta=1e-12)

    def test_reversal_negates_feature_gradient(self):
        """
        arrange: given the domain loss with and without the reversal at scale 1
        act: take the gradient with respect to the first layer weight
        assert: the two gradients are negations of each other.
        """
        batch, model = _batch(), _smooth_model()
        head = domain_head_init(4, 2, seed=2)
        weight = model.layers[0].weight

        _, reversed_loss = dann_terms(batch, model, head, 1.0)
        (g_reversed,) = grad(reversed_loss, [weight])
        z, _ = model.forward(Tensor(batch.features))
        plain_loss = softmax_cross_entropy(
            domain_head_forward(head, z), np.eye(2)[batch.domain_index]
        )
        (g_plain,) = grad(plain_loss, [weight])

        np.testing.assert_allclose(g_reversed, -g_plain, atol=1e-15)

    def test_single_domain(self):
        """
        arrange: given a batch from one domain
        act: compute the adversarial loss
        assert: a contract error is raised.
        """
        batch = _batch(domains=1)

        with self.assertRaises(ContractError):
            dann_loss(batch, _smooth_model(), domain_head_init(4, 2, seed=0), 1.0)

    def test_finite_differences(self):
        """
        arrange: given a reversal scale of 0.5
        act: compare analytic gradients with differences of L_y - 0.5 L_d for the network
            and of L_y + L_d for the head
        assert: the gradients agree within 1e-6.
        """
        batch, model = _batch(3), _smooth_model()
        head = domain_head_init(4, 2, seed=3)
        lam = 0.5

        def ascent():
            label_loss, domain_loss = dann_terms(batch, model, head, lam)
            return label_loss - domain_loss * lam

        def total():
            return dann_loss(batch, model, head, lam)

        analytic = grad(total(), _params(model) + _params(head))
        expected = [_numeric_gradient(ascent, tensor) for tensor in _params(model)]
        expected += [_numeric_gradient(total, tensor) for tensor in _params(head)]

        for got, want in zip(analytic, expected):
            np.testing.assert_allclose(got, want, rtol=FD_TOLERANCE, atol=FD_TOLERANCE)

    def test_scale_schedules(self):
        """
        arrange: given the constant and the progressive schedules
        act: compute the scale at the start and the end of training
        assert: constant returns the tradeoff, progressive ramps from 0.
        """
        constant = DGConfig(Method.DANN, dann_tradeoff=0.3)
        progressive = DGConfig(Method.DANN, dann_tradeoff=0.3, dann_schedule="progressive")

        self.assertEqual(dann_scale(constant, 0.7), 0.3)
        self.assertEqual(dann_scale(progressive, 0.0), 0.0)
        self.assertAlmostEqual(
            dann_scale(progressive, 1.0), 0.3 * (2.0 / (1.0 + math.exp(-10.0)) - 1.0)
        )


class TestMMD(unittest.TestCase):
    """Maximum mean discrepancy tests."""

    def test_identical_samples(self):
        """
        arrange: given two identical samples
        act: compute the discrepancy with both kernels
        assert: the value is 0 within 1e-9.
        """
        sample = np.random.default_rng(0).normal(size=(6, 3))

        for kind in ("linear", "rbf"):
            with self.subTest(scenario=kind):
                value = mmd(sample, sample.copy(), MMDKernel(kind))

                self.assertAlmostEqual(value, 0.0, delta=1e-9)

    def test_hand_value(self):
        """
        arrange: given the points (1, 0) and (0, 1)
        act: compute the linear-kernel discrepancy
        assert: the value is sqrt 2.
        """
        self.assertAlmostEqual(mmd([[1.0, 0.0]], [[0.0, 1.0]]), math.sqrt(2), delta=1e-12)

    def test_symmetry(self):
        """
        arrange: given two random samples of different sizes
        act: compute the discrepancy in both orders with both kernels
        assert: the values agree.
        """
        rng = np.random.default_rng(1)
        xs, xt = rng.normal(size=(5, 3)), rng.normal(1.0, size=(7, 3))

        for kernel in (MMDKernel(), MMDKernel("rbf"), MMDKernel("rbf", 0.5)):
            with self.subTest(scenario=f"{kernel.kind}-{kernel.bandwidth}"):
                self.assertAlmostEqual(mmd(xs, xt, kernel), mmd(xt, xs, kernel), delta=1e-12)
                self.assertGreater(mmd(xs, xt, kernel), 0.0)

    def test_invalid_inputs(self):
        """
        arrange: given samples of different widths, an empty sample and bad kernels
        act: compute the discrepancy or build the kernel
        assert: the matching errors are raised.
        """
        with self.assertRaises(DimensionError):
            mmd(np.ones((2, 3)), np.ones((2, 4)))
        with self.assertRaises(ContractError):
            mmd(np.ones((0, 3)), np.ones((2, 3)))
        with self.assertRaises(ConfigurationError):
            MMDKernel("poly")
        with self.assertRaises(ConfigurationError):
            MMDKernel("rbf", 0.0)

    def test_median_bandwidth(self):
        """
        arrange: given points at distances 1 and 2 and a point mass
        act: compute the median heuristic
        assert: the median positive distance is returned and 1 for the point mass.
        """
        self.assertEqual(median_bandwidth(np.array([[0.0]]), np.array([[1.0], [2.0]])), 1.0)
        self.assertEqual(median_bandwidth(np.zeros((2, 2)), np.zeros((3, 2))), 1.0)
        self.assertEqual(median_bandwidth(np.array([[0.0]]), np.array([[2.0], [5.0]])), 3.0)

    def test_rbf_finite_differences(self):
        """
        arrange: given an rbf kernel with a fixed bandwidth
        act: compare analytic and numeric gradients of MMD² with respect to the source rows
        assert: the relative error is below 1e-6.
        """
        rng = np.random.default_rng(2)
        xt = Tensor(rng.normal(size=(4, 3)))

        error = finite_diff_check(
            lambda t: mmd_squared(t, xt, MMDKernel("rbf", 1.5)), Tensor(rng.normal(size=(5, 3)))
        )

        self.assertLess(error, FD_TOLERANCE)


class TestDDC(unittest.TestCase):
    """MMD-regularized training tests."""

    def test_zero_weight_is_erm(self):
        """
        arrange: given a penalty weight of 0
        act: compute the DDC loss
        assert: it equals ERM exactly.
        """
        batch, model = _batch(), _smooth_model()

        self.assertEqual(ddc_loss(batch, model, 0.0).item(), erm_loss(batch, model).item())

    def test_identical_domains(self):
        """
        arrange: given two domains holding the same rows
        act: compute the DDC loss
        assert: the penalty vanishes.
        """
        rows = np.random.default_rng(4).normal(size=(3, 5))
        batch = MultiDomainBatch.from_arrays(
            np.vstack([rows, rows]), [0, 1, 2, 2, 1, 0], [0, 0, 0, 1, 1, 1]
        )
        model = _smooth_model()

        self.assertAlmostEqual(
            ddc_loss(batch, model, 2.0).item(), erm_loss(batch, model).item(), delta=1e-12
        )

    def test_three_domains_average_three_pairs(self):
        """
        arrange: given representations of three domains
        act: compute the pairwise penalty
        assert: it is the mean of the three pair terms.
        """
        rng = np.random.default_rng(5)
        parts = [Tensor(rng.normal(size=(4, 3))) for _ in range(3)]

        penalty = pairwise_mmd_penalty(parts).item()

        pairs = [mmd_squared(a, b).item() for a, b in itertools.combinations(parts, 2)]
        self.assertEqual(len(pairs), 3)
        self.assertAlmostEqual(penalty, sum(pairs) / 3, delta=1e-12)

    def test_single_domain(self):
        """
        arrange: given a batch from one domain
        act: compute the DDC loss
        assert: a contract error is raised.
        """
        with self.assertRaises(ContractError):
            ddc_loss(_batch(domains=1), _smooth_model(), 1.0)

    def test_finite_differences(self):
        """
        arrange: given an rbf kernel with a fixed bandwidth and three domains
        act: compare analytic and numeric gradients of the DDC loss
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(4, rows=9, domains=3), _smooth_model()
        kernel = MMDKernel("rbf", 1.0)

        _assert_finite_differences(self, model, lambda: ddc_loss(batch, model, 0.8, kernel))


class TestCORAL(unittest.TestCase):
    """Correlation alignment tests."""

    def test_covariance_values(self):
        """
        arrange: given identical rows and the rows (1, 0), (-1, 0)
        act: compute the covariances
        assert: the first is zero and the second is [[2, 0], [0, 0]].
        """
        np.testing.assert_allclose(coral_cov(np.ones((4, 3)) * 2.5).data, np.zeros((3, 3)))
        np.testing.assert_allclose(
            coral_cov(np.array([[1.0, 0.0], [-1.0, 0.0]])).data, [[2.0, 0.0], [0.0, 0.0]]
        )

    def test_covariance_properties(self):
        """
        arrange: given random rows
        act: compute the covariance
        assert: it is symmetric, positive semidefinite and equals numpy's estimate.
        """
        rows = np.random.default_rng(6).normal(size=(10, 4))

        cov = coral_cov(rows).data

        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        self.assertGreaterEqual(np.linalg.eigvalsh(cov).min(), -1e-9)
        np.testing.assert_allclose(cov, np.cov(rows, rowvar=False), atol=1e-12)

    def test_covariance_needs_two_rows(self):
        """
        arrange: given a single row
        act: compute the covariance
        assert: a contract error is raised.
        """
        with self.assertRaises(ContractError):
            coral_cov(np.ones((1, 3)))

    def test_loss_values(self):
        """
        arrange: given equal covariances and the pair [[2]], [[0]]
        act: compute the loss in both orders
        assert: equal covariances give 0, the pair gives 1 both ways.
        """
        cov = coral_cov(np.random.default_rng(7).normal(size=(5, 3)))

        self.assertEqual(coral_loss(cov, cov).item(), 0.0)
        self.assertEqual(coral_loss([[2.0]], [[0.0]]).item(), 1.0)
        self.assertEqual(coral_loss([[0.0]], [[2.0]]).item(), 1.0)
        with self.assertRaises(DimensionError):
            coral_loss(np.eye(2), np.eye(3))

    def test_zero_weight_is_erm(self):
        """
        arrange: given a penalty weight of 0
        act: compute the CORAL objective
        assert: it equals ERM exactly.
        """
        batch, model = _batch(), _smooth_model()

        self.assertEqual(coral_total(batch, model, 0.0).item(), erm_loss(batch, model).item())

    def test_point_mass_domains(self):
        """
        arrange: given domains whose rows are all the same point
        act: compute the CORAL objective
        assert: the penalty vanishes.
        """
        features = np.tile(np.linspace(-1.0, 1.0, 5), (6, 1))
        batch = MultiDomainBatch.from_arrays(features, [0, 1, 2] * 2, [0, 0, 0, 1, 1, 1])
        model = _smooth_model()

        self.assertAlmostEqual(
            coral_total(batch, model, 5.0).item(), erm_loss(batch, model).item(), delta=1e-12
        )

    def test_single_row_domain(self):
        """
        arrange: given a domain with a single row
        act: compute the CORAL objective
        assert: a contract error is raised.
        """
        features, labels, _ = random_batch_arrays(0, rows=4, width=5)
        batch = MultiDomainBatch.from_arrays(features, labels, [0, 0, 0, 1])

        with self.assertRaises(ContractError):
            coral_total(batch, _smooth_model(), 1.0)

    def test_finite_differences(self):
        """
        arrange: given a smooth network and two domains
        act: compare analytic and numeric gradients of the CORAL objective
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(5), _smooth_model()

        _assert_finite_differences(self, model, lambda: coral_total(batch, model, 3.0))


class TestRSC(unittest.TestCase):
    """Representation self-challenging tests."""

    def test_zero_drop_is_erm(self):
        """
        arrange: given a drop factor of 0
        act: compute the RSC loss
        assert: it equals ERM exactly.
        """
        batch, model = _batch(), mlp_init(5, [6], 3, seed=0)

        self.assertEqual(rsc_step(batch, model, 0.0).item(), erm_loss(batch, model).item())

    def test_drop_count(self):
        """
        arrange: given six representation elements and a drop factor of 1/3
        act: build the mask
        assert: exactly two elements are muted per row.
        """
        gradients = np.random.default_rng(0).normal(size=(4, 6))

        mask = rsc_mask(gradients, 1.0 / 3.0)

        self.assertEqual(rsc_drop_count(1.0 / 3.0, 6), 2)
        self.assertEqual(rsc_drop_count(0.5, 5), 3)
        np.testing.assert_array_equal((mask == 0).sum(axis=1), [2, 2, 2, 2])

    def test_linear_head_gradient(self):
        """
        arrange: given a task head whose class-0 column is (3, 1, 2, 0, 5, 4)
        act: take the RSC step on class-0 samples
        assert: elements 4 and 5 are muted before the loss.
        """
        rng = np.random.default_rng(1)
        head_weight = rng.normal(size=(6, 3))
        head_weight[:, 0] = [3.0, 1.0, 2.0, 0.0, 5.0, 4.0]
        model = MLPModel(
            [
                Linear(Tensor(rng.normal(size=(5, 6)), True), Tensor(np.ones(6), True)),
                Linear(Tensor(head_weight, True), Tensor(np.zeros(3), True)),
            ]
        )
        batch = MultiDomainBatch.from_arrays(rng.normal(size=(4, 5)), [0] * 4, [0, 0, 1, 1])

        loss = rsc_step(batch, model, 1.0 / 3.0)

        mask = np.ones(6)
        mask[[4, 5]] = 0.0
        self.assertEqual(rsc_mask(head_weight[:, 0][None, :], 1.0 / 3.0).tolist(), [mask.tolist()])
        z = model.features(Tensor(batch.features))
        expected = softmax_cross_entropy(model.head(Tensor(z.data * mask)), batch.labels)
        self.assertAlmostEqual(loss.item(), expected.item(), delta=1e-12)

    def test_tie_break(self):
        """
        arrange: given a row of equal gradients
        act: mask one element
        assert: the lowest index is muted.
        """
        np.testing.assert_array_equal(rsc_mask(np.ones((1, 4)), 0.25), [[0.0, 1.0, 1.0, 1.0]])

    def test_batch_drop(self):
        """
        arrange: given a batch drop factor of 0.5
        act: compute the RSC loss
        assert: the loss is finite and a factor of 1 is rejected.
        """
        batch, model = _batch(6, rows=8), mlp_init(5, [6], 3, seed=2)

        partial = rsc_step(batch, model, 1.0 / 3.0, batch_drop_factor=0.5).item()

        self.assertTrue(math.isfinite(partial))
        with self.assertRaises(ConfigurationError):
            rsc_step(batch, model, 1.0 / 3.0, batch_drop_factor=1.0)

    def test_invalid_drop_factor(self):
        """
        arrange: given drop factors of 1 and -0.1
        act: compute the RSC loss
        assert: a configuration error is raised.
        """
        for drop in (1.0, -0.1):
            with self.subTest(scenario=drop), self.assertRaises(ConfigurationError):
                rsc_step(_batch(), _smooth_model(), drop)

    def test_finite_differences(self):
        """
        arrange: given a smooth network and a drop factor of 1/3
        act: compare analytic and numeric gradients of the RSC loss
        assert: the relative error is below 1e-6.
        """
        batch, model = _batch(7), mlp_init(5, [6], 3, seed=4, activation="sigmoid")

        _assert_finite_differences(self, model, lambda: rsc_step(batch, model, 1.0 / 3.0))


class TestMethodDispatch(unittest.TestCase):
    """Method selection tests."""

    def test_parse_method(self):
        """
        arrange: given ids, table aliases and an unknown id
        act: resolve them
        assert: aliases map to their method and the unknown id is rejected.
        """
        self.assertEqual(parse_method("ERM"), Method.ERM)
        self.assertEqual(parse_method("mmd"), Method.DDC)
        self.assertEqual(parse_method("group_dro"), Method.GROUP_DRO)
        self.assertEqual(DGConfig(Method.DDC).label, "MMD")
        with self.assertRaises(ConfigurationError):
            parse_method("sgd")

    def test_config_validation(self):
        """
        arrange: given out-of-range hyperparameters
        act: build the configurations
        assert: a configuration error is raised for each.
        """
        for scenario, values in {
            "negative_eta": {"dro_eta": -1.0},
            "zero_alpha": {"mixup_alpha": 0.0},
            "full_drop": {"rsc_drop_factor": 1.0},
            "bad_schedule": {"dann_schedule": "linear"},
        }.items():
            with self.subTest(scenario=scenario), self.assertRaises(ConfigurationError):
                DGConfig(**values)

    def test_per_fold_state(self):
        """
        arrange: given the DANN and group DRO configurations over five domains
        act: create the fold state
        assert: DANN owns a five-way head, group DRO owns uniform weights.
        """
        dann = DGMethod(DGConfig(Method.DANN), representation_dim=4, domain_count=5, seed=0)
        dro = DGMethod(DGConfig(Method.GROUP_DRO), representation_dim=4, domain_count=5, seed=0)

        self.assertEqual(dann.head.domain_count, 5)
        self.assertEqual(len(dann.parameters()), 2)
        np.testing.assert_allclose(dro.group_weights.q, np.full(5, 0.2))
        self.assertEqual(dro.parameters(), [])

    def test_losses_dispatch(self):
        """
        arrange: given every method over a two-domain batch
        act: compute the training loss
        assert: each loss is a finite scalar and ERM matches erm_loss.
        """
        batch, model = _batch(8), _smooth_model()

        for method in Method:
            with self.subTest(scenario=method.value):
                state = DGMethod(DGConfig(method), model.representation_dim, 2, seed=0)

                loss = state.loss(batch, model, np.random.default_rng(0), progress=0.5)

                self.assertEqual(loss.shape, ())
                self.assertTrue(math.isfinite(loss.item()))
        erm = DGMethod(DGConfig(), model.representation_dim, 2, seed=0)
        self.assertEqual(
            erm.loss(batch, model, np.random.default_rng(0)).item(),
            erm_loss(batch, model).item(),
        )

    def test_single_domain_batches_fall_back(self):
        """
        arrange: given a batch from one domain
        act: compute the DANN, DDC and CORAL training losses
        assert: each equals ERM.
        """
        batch, model = _batch(9, domains=1), _smooth_model()

        for method in (Method.DANN, Method.DDC, Method.CORAL):
            with self.subTest(scenario=method.value):
                state = DGMethod(DGConfig(method), model.representation_dim, 2, seed=0)

                loss = state.loss(batch, model, np.random.default_rng(0))

                self.assertEqual(loss.item(), erm_loss(batch, model).item())

    def test_representation_alignment(self):
        """
        arrange: given two identical domains and a single domain
        act: compute the alignment statistics
        assert: both statistics are 0 for identical domains; one domain is rejected.
        """
        model = _smooth_model()
        rows = np.random.default_rng(10).normal(size=(6, 5))

        stats = representation_alignment(model, [rows, rows.copy()])

        self.assertEqual(sorted(stats), ["coral", "mmd"])
        self.assertAlmostEqual(stats["mmd"], 0.0, delta=1e-12)
        self.assertAlmostEqual(stats["coral"], 0.0, delta=1e-12)
        with self.assertRaises(InputError):
            representation_alignment(model, [rows])
