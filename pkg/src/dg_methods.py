# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Domain generalization training objectives over multi-domain minibatches.

Every objective returns a scalar Tensor ready for tensor_core.backward. The
alignment penalties (MMD, CORAL) are applied between pairs of source domains
because no target data exists at training time.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigurationError, ContractError, DimensionError, InputError
from models import DomainHead, Model, Parameters, domain_head_forward, domain_head_init
from tensor_core import (
    Tensor,
    as_tensor,
    exp,
    grad,
    grad_reverse,
    mask_elements,
    no_grad,
    soft_cross_entropy,
    softmax_cross_entropy,
    take_rows,
)

logger = logging.getLogger(__name__)


class Method(str, Enum):
    """Supported training strategies."""

    ERM = "erm"
    DANN = "dann"
    RSC = "rsc"
    MIXUP = "mixup"
    DDC = "ddc"
    CORAL = "coral"
    GROUP_DRO = "groupdro"


# Column headers of the result table, in table order.
METHOD_LABELS = {
    Method.ERM: "ERM",
    Method.DANN: "DANN",
    Method.RSC: "RSC",
    Method.MIXUP: "Mixup",
    Method.DDC: "MMD",
    Method.CORAL: "CORAL",
    Method.GROUP_DRO: "GroupDRO",
}

METHOD_ALIASES = {"mmd": Method.DDC, "group_dro": Method.GROUP_DRO}


def parse_method(name: str) -> Method:
    """Resolve a method id, accepting the aliases used in result tables.

    Args:
        name: method id, case-insensitive.

    Returns:
        The method.

    Raises:
        ConfigurationError: on an unknown id.
    """
    key = name.lower()
    if key in METHOD_ALIASES:
        return METHOD_ALIASES[key]
    try:
        return Method(key)
    except ValueError as exc:
        known = ", ".join(m.value for m in Method)
        raise ConfigurationError(f"unknown method {name!r}, expected one of {known}") from exc


@dataclass(frozen=True)
class DomainBatch:
    """Rows of one source domain inside a minibatch.

    Attrs:
        features: matrix n_d×d.
        labels: one-hot matrix n_d×C.
        domain: domain index in [0, M).
    """

    features: np.ndarray
    labels: np.ndarray
    domain: int


@dataclass(frozen=True)
class MultiDomainBatch:
    """Minibatch made of per-domain sub-batches in ascending domain order.

    Attrs:
        parts: sub-batches sorted by domain index, each domain at most once.
    """

    parts: Tuple[DomainBatch, ...]

    def __post_init__(self):
        """Check ordering and shapes.

        Raises:
            ContractError: on unsorted, repeated or negative domain indices.
            DimensionError: on inconsistent feature or label widths.
        """
        domains = [part.domain for part in self.parts]
        if domains != sorted(set(domains)) or any(d < 0 for d in domains):
            raise ContractError(f"sub-batches must have distinct ascending domains, got {domains}")
        if len({part.features.shape[1:] for part in self.parts}) > 1:
            raise DimensionError("sub-batches disagree on the feature width")
        if len({part.labels.shape[1:] for part in self.parts}) > 1:
            raise DimensionError("sub-batches disagree on the class count")
        for part in self.parts:
            if part.features.shape[0] != part.labels.shape[0]:
                raise DimensionError(
                    f"domain {part.domain}: features and labels row counts differ"
                )

    @classmethod
    def from_arrays(
        cls, features: np.ndarray, labels: np.ndarray, domains: np.ndarray, class_count: int = 3
    ) -> "MultiDomainBatch":
        """Group flat arrays by domain, keeping sample order within each domain.

        Args:
            features: matrix n×d.
            labels: integer class labels of length n.
            domains: integer domain indices of length n.
            class_count: number of classes for the one-hot encoding.

        Returns:
            The batch.
        """
        features = np.asarray(features, dtype=np.float64)
        onehot = np.eye(class_count)[np.asarray(labels, dtype=np.int64)]
        domains = np.asarray(domains, dtype=np.int64)
        parts = tuple(
            DomainBatch(features[domains == d], onehot[domains == d], int(d))
            for d in np.unique(domains)
        )
        return cls(parts)

    @property
    def n(self) -> int:
        """Total number of rows."""
        return sum(part.features.shape[0] for part in self.parts)

    @property
    def domains(self) -> List[int]:
        """Domain indices present, ascending."""
        return [part.domain for part in self.parts]

    @property
    def features(self) -> np.ndarray:
        """All rows, concatenated in domain order."""
        return np.concatenate([part.features for part in self.parts], axis=0)

    @property
    def labels(self) -> np.ndarray:
        """All one-hot labels, concatenated in domain order."""
        return np.concatenate([part.labels for part in self.parts], axis=0)

    @property
    def domain_index(self) -> np.ndarray:
        """Domain index of every row."""
        return np.concatenate(
            [np.full(part.features.shape[0], part.domain, dtype=np.int64) for part in self.parts]
        )

    def rows(self) -> Dict[int, np.ndarray]:
        """Positions of each domain's rows in the concatenation.

        Returns:
            Row indices per domain.
        """
        positions, start = {}, 0
        for part in self.parts:
            count = part.features.shape[0]
            positions[part.domain] = np.arange(start, start + count)
            start += count
        return positions


@dataclass(frozen=True)
class MMDKernel:
    """Kernel used by the MMD statistic.

    Attrs:
        kind: "linear" (identity feature map) or "rbf".
        bandwidth: rbf bandwidth; None selects the median pairwise distance.
    """

    kind: str = "linear"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        """Validate the kernel.

        Raises:
            ConfigurationError: on an unknown kind or a non-positive bandwidth.
        """
        if self.kind not in ("linear", "rbf"):
            raise ConfigurationError(f"unknown MMD kernel {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigurationError(f"rbf bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class DGConfig:  # pylint: disable=too-many-instance-attributes
    """Method selection and hyperparameters.

    Attrs:
        method: training strategy.
        mixup_alpha: Beta(alpha, alpha) concentration of the Mixup coefficient.
        dro_eta: step size of the group weight update.
        dro_exact_max: put all weight on the worst group instead of the smoothed update.
        dann_tradeoff: gradient reversal scale.
        dann_schedule: "constant" or "progressive" ramp of the reversal scale.
        dann_head_hidden: hidden widths of the domain classifier.
        ddc_weight: weight of the MMD² penalty.
        coral_weight: weight of the CORAL penalty.
        rsc_drop_factor: fraction of representation elements muted per sample.
        rsc_batch_drop_factor: fraction of samples the mute applies to; 0 applies it to all.
        mmd_kernel: kernel of the MMD statistic.
    """

    method: Method = Method.ERM
    mixup_alpha: float = 0.2
    dro_eta: float = 0.01
    dro_exact_max: bool = False
    dann_tradeoff: float = 1.0
    dann_schedule: str = "constant"
    dann_head_hidden: Tuple[int, ...] = ()
    ddc_weight: float = 1.0
    coral_weight: float = 1.0
    rsc_drop_factor: float = 1.0 / 3.0
    rsc_batch_drop_factor: float = 0.0
    mmd_kernel: MMDKernel = field(default_factory=MMDKernel)

    def __post_init__(self):
        """Validate the hyperparameters.

        Raises:
            ConfigurationError: on any out-of-range value.
        """
        for name in ("dro_eta", "dann_tradeoff", "ddc_weight", "coral_weight"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.mixup_alpha <= 0:
            raise ConfigurationError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        for name in ("rsc_drop_factor", "rsc_batch_drop_factor"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.dann_schedule not in ("constant", "progressive"):
            raise ConfigurationError(f"unknown dann_schedule {self.dann_schedule!r}")

    @property
    def label(self) -> str:
        """Display name as used in result tables."""
        return METHOD_LABELS[self.method]


@dataclass
class GroupWeights:
    """Mixture weights over the source domains, kept on the probability simplex.

    Attrs:
        q: nonnegative weights summing to one.
    """

    q: np.ndarray

    @classmethod
    def uniform(cls, groups: int) -> "GroupWeights":
        """Equal weight on every group.

        Args:
            groups: number of groups M.

        Returns:
            The weights.
        """
        return cls(np.full(groups, 1.0 / groups))


def _require_rows(batch: MultiDomainBatch) -> None:
    """Reject empty batches.

    Args:
        batch: candidate batch.

    Raises:
        ContractError: if the batch holds no rows.
    """
    if batch.n < 1:
        raise ContractError("empty batch")


def erm_loss(batch: MultiDomainBatch, model: Model) -> Tensor:
    """Mean cross-entropy over all rows, ignoring domains.

    Args:
        batch: minibatch.
        model: network.

    Returns:
        The scalar loss.
    """
    _require_rows(batch)
    _, logits = model.forward(Tensor(batch.features))
    return softmax_cross_entropy(logits, batch.labels)


@dataclass(frozen=True)
class VirtualBatch:
    """Mixup interpolation of a batch.

    Attrs:
        features: interpolated rows.
        soft_labels: interpolated label distributions.
        lam: interpolation coefficient of every row.
        partners: row each sample was mixed with.
    """

    features: np.ndarray
    soft_labels: np.ndarray
    lam: np.ndarray
    partners: np.ndarray


def mixup_batch(
    batch: MultiDomainBatch,
    alpha: float,
    rng: np.random.Generator,
    lam: Optional[float] = None,
    partners: Optional[Sequence[int]] = None,
) -> VirtualBatch:
    """Interpolate every row with a partner drawn by a random permutation of the batch.

    Args:
        batch: minibatch, at least 2 rows.
        alpha: Beta(alpha, alpha) concentration.
        rng: generator for the permutation and the coefficients.
        lam: force every coefficient to this value.
        partners: force the partner of every row.

    Returns:
        The virtual batch x̃ = λx_i + (1-λ)x_j, ỹ = λy_i + (1-λ)y_j.

    Raises:
        ContractError: on fewer than 2 rows.
        ConfigurationError: on a non-positive alpha or a forced lam outside [0, 1].
    """
    n = batch.n
    if n < 2:
        raise ContractError(f"mixup needs at least 2 rows, got {n}")
    if alpha <= 0:
        raise ConfigurationError(f"mixup alpha must be positive, got {alpha}")
    order = rng.permutation(n) if partners is None else np.asarray(partners, dtype=np.int64)
    if lam is None:
        coefficients = rng.beta(alpha, alpha, size=n)
    elif 0.0 <= lam <= 1.0:
        coefficients = np.full(n, float(lam))
    else:
        raise ConfigurationError(f"mixup coefficient must lie in [0, 1], got {lam}")
    x, y = batch.features, batch.labels
    weight = coefficients[:, None]
    return VirtualBatch(
        features=weight * x + (1.0 - weight) * x[order],
        soft_labels=weight * y + (1.0 - weight) * y[order],
        lam=coefficients,
        partners=order,
    )


def mixup_loss(virtual: VirtualBatch, model: Model) -> Tensor:
    """Soft-target cross-entropy on a virtual batch.

    Args:
        virtual: output of mixup_batch.
        model: network.

    Returns:
        The scalar loss.
    """
    _, logits = model.forward(Tensor(virtual.features))
    return soft_cross_entropy(logits, virtual.soft_labels)


def group_losses(batch: MultiDomainBatch, model: Model) -> Dict[int, Tensor]:
    """Mean cross-entropy of every domain present in the batch.

    Args:
        batch: minibatch.
        model: network.

    Returns:
        Scalar loss per domain index.
    """
    _require_rows(batch)
    _, logits = model.forward(Tensor(batch.features))
    labels = batch.labels
    return {
        domain: softmax_cross_entropy(take_rows(logits, rows), labels[rows])
        for domain, rows in batch.rows().items()
        if len(rows)
    }


def update_group_weights(
    weights: GroupWeights,
    losses: Dict[int, float],
    eta: float,
    exact_max: bool = False,
) -> GroupWeights:
    """Exponentiated-gradient step q_g ← q_g·exp(eta·L_g), renormalized to the simplex.

    Groups missing from losses keep their weight before renormalization.

    Args:
        weights: current weights.
        losses: loss of every group present in the batch.
        eta: step size.
        exact_max: put all weight on the worst present group (ties → lowest index).

    Returns:
        The updated weights.

    Raises:
        ConfigurationError: if eta is negative.
        ContractError: if a group index is outside the weight vector.
    """
    if eta < 0:
        raise ConfigurationError(f"group DRO step size must be nonnegative, got {eta}")
    groups = len(weights.q)
    if any(not 0 <= g < groups for g in losses):
        raise ContractError(f"group index outside [0, {groups}) in {sorted(losses)}")
    if exact_max:
        worst = max(sorted(losses), key=lambda g: losses[g])
        q = np.zeros(groups)
        q[worst] = 1.0
        return GroupWeights(q)
    exponent = np.zeros(groups)
    for group, value in losses.items():
        exponent[group] = eta * value
    with np.errstate(divide="ignore"):
        log_q = np.log(weights.q) + exponent
    log_q -= log_q.max()
    q = np.exp(log_q)
    return GroupWeights(q / q.sum())


def group_dro_step(
    batch: MultiDomainBatch,
    model: Model,
    weights: GroupWeights,
    eta: float,
    exact_max: bool = False,
) -> Tuple[Tensor, GroupWeights]:
    """Worst-group objective: update the weights, then weight the group losses with them.

    The weights are constants for differentiation.

    Args:
        batch: minibatch.
        model: network.
        weights: current group weights.
        eta: step size.
        exact_max: use the exact worst-group weights.

    Returns:
        (Σ_g q_g·L_g over present groups with q renormalized over them, updated weights).
    """
    per_group = group_losses(batch, model)
    updated = update_group_weights(
        weights, {g: loss.item() for g, loss in per_group.items()}, eta, exact_max
    )
    missing = set(range(len(weights.q))) - set(per_group)
    if missing:
        logger.debug("Group DRO: no rows for groups %s in this batch", sorted(missing))
    present = sorted(per_group)
    mass = updated.q[present].sum()
    total = None
    for group in present:
        term = per_group[group] * float(updated.q[group] / mass)
        total = term if total is None else total + term
    return total, updated


def dann_terms(
    batch: MultiDomainBatch, model: Model, head: DomainHead, lam: float
) -> Tuple[Tensor, Tensor]:
    """Label loss and domain loss of the adversarial objective.

    The domain classifier sees grad_reverse(z, lam), so the feature layers
    ascend the domain loss while the head descends it.

    Args:
        batch: minibatch with at least 2 domains.
        model: network.
        head: domain classifier.
        lam: reversal scale.

    Returns:
        (L_y, L_d).

    Raises:
        ContractError: on a single-domain batch or a domain outside the head range.
    """
    if len(batch.parts) < 2:
        raise ContractError("domain classification needs at least 2 domains in the batch")
    domains = batch.domain_index
    if domains.max() >= head.domain_count:
        raise ContractError(f"domain index {domains.max()} outside head of {head.domain_count}")
    z, logits = model.forward(Tensor(batch.features))
    label_loss = softmax_cross_entropy(logits, batch.labels)
    domain_logits = domain_head_forward(head, grad_reverse(z, lam))
    domain_loss = softmax_cross_entropy(domain_logits, np.eye(head.domain_count)[domains])
    return label_loss, domain_loss


def dann_loss(batch: MultiDomainBatch, model: Model, head: DomainHead, lam: float) -> Tensor:
    """L_y + L_d with the reversal carrying -lam to the feature layers.

    Args:
        batch: minibatch with at least 2 domains.
        model: network.
        head: domain classifier.
        lam: reversal scale.

    Returns:
        The scalar loss.
    """
    label_loss, domain_loss = dann_terms(batch, model, head, lam)
    return label_loss + domain_loss


def _squared_distances(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows.

    Args:
        a: matrix n×d.
        b: matrix m×d.

    Returns:
        The n×m distance matrix.
    """
    return (a * a).sum(axis=1, keepdims=True) + (b * b).sum(axis=1, keepdims=True).T - 2.0 * (
        a @ b.T
    )


def median_bandwidth(xs: np.ndarray, xt: np.ndarray) -> float:
    """Median pairwise distance of the pooled sample.

    Args:
        xs: first sample.
        xt: second sample.

    Returns:
        The median of the positive pairwise distances, 1.0 when there are none.
    """
    pooled = np.concatenate([xs, xt], axis=0)
    diffs = pooled[:, None, :] - pooled[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))[np.triu_indices(len(pooled), k=1)]
    dists = dists[dists > 0]
    return float(np.median(dists)) if dists.size else 1.0


def mmd_squared(xs, xt, kernel: MMDKernel = MMDKernel()) -> Tensor:
    """Biased MMD² estimate between two samples.

    Args:
        xs: source sample n_s×d (Tensor or array).
        xt: target sample n_t×d (Tensor or array).
        kernel: kernel spec.

    Returns:
        The scalar statistic; differentiable through both samples.

    Raises:
        DimensionError: if the widths differ.
        ContractError: if a sample is empty.
    """
    xs, xt = as_tensor(xs), as_tensor(xt)
    if xs.data.ndim != 2 or xt.data.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise DimensionError(f"mmd: sample shapes {xs.shape} and {xt.shape} differ in width")
    if xs.shape[0] < 1 or xt.shape[0] < 1:
        raise ContractError("mmd needs at least one row per sample")
    if kernel.kind == "linear":
        diff = xs.mean(axis=0) - xt.mean(axis=0)
        return (diff * diff).sum()
    bandwidth = kernel.bandwidth or median_bandwidth(xs.data, xt.data)
    gamma = -1.0 / (2.0 * bandwidth**2)
    k_ss = exp(_squared_distances(xs, xs) * gamma).mean()
    k_tt = exp(_squared_distances(xt, xt) * gamma).mean()
    k_st = exp(_squared_distances(xs, xt) * gamma).mean()
    return k_ss + k_tt - k_st * 2.0


def mmd(xs, xt, kernel: MMDKernel = MMDKernel()) -> float:
    """Maximum mean discrepancy between two samples.

    Args:
        xs: source sample n_s×d.
        xt: target sample n_t×d.
        kernel: kernel spec; linear gives the distance between sample means.

    Returns:
        sqrt(max(0, MMD²)).
    """
    with no_grad():
        value = mmd_squared(xs, xt, kernel).item()
    return math.sqrt(max(0.0, value))


def coral_cov(d) -> Tensor:
    """Sample covariance (DᵀD − (1ᵀD)ᵀ(1ᵀD)/n) / (n−1).

    Args:
        d: matrix n×d (Tensor or array).

    Returns:
        The d×d covariance.

    Raises:
        ContractError: on fewer than 2 rows.
    """
    rows = as_tensor(d)
    n = rows.shape[0]
    if n < 2:
        raise ContractError(f"covariance needs at least 2 rows, got {n}")
    column_sums = rows.sum(axis=0, keepdims=True)
    return (rows.T @ rows - (column_sums.T @ column_sums) / n) / (n - 1)


def coral_loss(c_s, c_t) -> Tensor:
    """Squared Frobenius distance between covariances, scaled by 1/(4d²).

    Args:
        c_s: source covariance d×d.
        c_t: target covariance d×d.

    Returns:
        The scalar loss.

    Raises:
        DimensionError: if the shapes differ.
    """
    c_s, c_t = as_tensor(c_s), as_tensor(c_t)
    if c_s.shape != c_t.shape or c_s.data.ndim != 2 or c_s.shape[0] != c_s.shape[1]:
        raise DimensionError(f"coral: covariance shapes {c_s.shape} and {c_t.shape} differ")
    width = c_s.shape[0]
    diff = c_s - c_t
    return (diff * diff).sum() / (4.0 * width * width)


def _mean_over_pairs(parts: Sequence[Tensor], term) -> Tensor:
    """Average a pairwise term over all unordered pairs.

    Args:
        parts: per-domain representations.
        term: function of two representations returning a scalar Tensor.

    Returns:
        The mean term.

    Raises:
        ContractError: on fewer than 2 parts.
    """
    pairs = list(itertools.combinations(range(len(parts)), 2))
    if not pairs:
        raise ContractError("pairwise penalties need at least 2 domains")
    total = None
    for i, j in pairs:
        value = term(parts[i], parts[j])
        total = value if total is None else total + value
    return total / len(pairs)


def pairwise_mmd_penalty(parts: Sequence[Tensor], kernel: MMDKernel = MMDKernel()) -> Tensor:
    """Mean MMD² over all unordered pairs of domain representations.

    Args:
        parts: per-domain representations.
        kernel: kernel spec.

    Returns:
        The scalar penalty.
    """
    return _mean_over_pairs(parts, lambda a, b: mmd_squared(a, b, kernel))


def pairwise_coral_penalty(parts: Sequence[Tensor]) -> Tensor:
    """Mean CORAL loss over all unordered pairs of domain representations.

    Args:
        parts: per-domain representations, at least 2 rows each.

    Returns:
        The scalar penalty.
    """
    return _mean_over_pairs(parts, lambda a, b: coral_loss(coral_cov(a), coral_cov(b)))


def _aligned_loss(
    batch: MultiDomainBatch, model: Model, weight: float, penalty, min_rows: int
) -> Tensor:
    """Classification loss plus a weighted pairwise penalty on z.

    Domains with fewer than min_rows rows are left out of the penalty.

    Args:
        batch: minibatch.
        model: network.
        weight: penalty weight.
        penalty: function of the per-domain representations.
        min_rows: rows a domain needs to take part in the penalty.

    Returns:
        The scalar loss.
    """
    _require_rows(batch)
    z, logits = model.forward(Tensor(batch.features))
    classification = softmax_cross_entropy(logits, batch.labels)
    if weight == 0:
        return classification
    parts = [take_rows(z, rows) for rows in batch.rows().values() if len(rows) >= min_rows]
    if len(parts) < 2:
        logger.debug("Alignment skipped: %s eligible domains in batch", len(parts))
        return classification
    return classification + penalty(parts) * weight


def ddc_loss(
    batch: MultiDomainBatch, model: Model, lam: float, kernel: MMDKernel = MMDKernel()
) -> Tensor:
    """l_C + lam · mean pairwise MMD² between source-domain representations.

    Args:
        batch: minibatch with at least 2 domains.
        model: network.
        lam: penalty weight.
        kernel: MMD kernel.

    Returns:
        The scalar loss.

    Raises:
        ContractError: on fewer than 2 domains.
    """
    if len(batch.parts) < 2:
        raise ContractError(f"DDC needs at least 2 domains, got {len(batch.parts)}")
    return _aligned_loss(batch, model, lam, lambda p: pairwise_mmd_penalty(p, kernel), 1)


def coral_total(batch: MultiDomainBatch, model: Model, weight: float) -> Tensor:
    """l_C + weight · mean pairwise CORAL loss between source-domain representations.

    Args:
        batch: minibatch with at least 2 domains of at least 2 rows each.
        model: network.
        weight: penalty weight.

    Returns:
        The scalar loss.

    Raises:
        ContractError: on fewer than 2 domains or a domain with a single row.
    """
    if len(batch.parts) < 2:
        raise ContractError(f"CORAL needs at least 2 domains, got {len(batch.parts)}")
    for part in batch.parts:
        if part.features.shape[0] < 2:
            raise ContractError(f"CORAL needs at least 2 rows in domain {part.domain}")
    return _aligned_loss(batch, model, weight, pairwise_coral_penalty, 2)


def rsc_drop_count(drop_factor: float, width: int) -> int:
    """Number of representation elements muted per sample.

    Args:
        drop_factor: fraction in [0, 1).
        width: representation width d_z.

    Returns:
        ceil(drop_factor · width).
    """
    return math.ceil(round(drop_factor * width, 9))


def rsc_mask(gradients: np.ndarray, drop_factor: float) -> np.ndarray:
    """Mask the largest-gradient elements of every row.

    Args:
        gradients: g_z, matrix n×d_z.
        drop_factor: fraction of elements to mute per row.

    Returns:
        Binary mask with exactly rsc_drop_count zeros per row; ties go to the lowest index.
    """
    n, width = gradients.shape
    count = rsc_drop_count(drop_factor, width)
    mask = np.ones((n, width))
    if count:
        muted = np.argsort(-gradients, axis=1, kind="stable")[:, :count]
        mask[np.arange(n)[:, None], muted] = 0.0
    return mask


def _validate_drop(drop_factor: float, name: str) -> None:
    """Check a drop factor.

    Args:
        drop_factor: value to check.
        name: parameter name for the message.

    Raises:
        ConfigurationError: if the value is outside [0, 1).
    """
    if not 0.0 <= drop_factor < 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1), got {drop_factor}")


def rsc_step(
    batch: MultiDomainBatch,
    model: Model,
    drop_factor: float,
    batch_drop_factor: float = 0.0,
) -> Tensor:
    """Self-challenging objective: learn from the representation minus its dominant elements.

    g_z is the gradient of the true-class logit with respect to z; the
    largest entries of each row are muted before the classification loss.

    Args:
        batch: minibatch.
        model: network.
        drop_factor: fraction of elements muted per sample.
        batch_drop_factor: when positive, only the samples whose true-class
            probability drops most under the mute (this top fraction) keep it.

    Returns:
        The scalar loss on the muted representation.
    """
    _validate_drop(drop_factor, "rsc_drop_factor")
    _validate_drop(batch_drop_factor, "rsc_batch_drop_factor")
    _require_rows(batch)
    labels = batch.labels
    z, logits = model.forward(Tensor(batch.features))
    features = Tensor(z.data, requires_grad=True)
    (gradients,) = grad((model.head(features) * labels).sum(), [features])
    mask = rsc_mask(gradients, drop_factor)
    if batch_drop_factor > 0:
        with no_grad():
            muted_logits = model.head(Tensor(z.data * mask)).data
        change = _true_class_probability(logits.data, labels) - _true_class_probability(
            muted_logits, labels
        )
        threshold = np.percentile(change, (1.0 - batch_drop_factor) * 100.0)
        mask[change < threshold] = 1.0
    return softmax_cross_entropy(model.head(mask_elements(z, mask)), labels)


def _true_class_probability(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Softmax probability of the labelled class.

    Args:
        logits: matrix n×C.
        labels: one-hot matrix n×C.

    Returns:
        Vector of n probabilities.
    """
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (shifted * labels).sum(axis=1) / shifted.sum(axis=1)


def dann_scale(config: DGConfig, progress: float) -> float:
    """Reversal scale at a point of training.

    Args:
        config: method configuration.
        progress: fraction of training done, in [0, 1].

    Returns:
        The tradeoff, ramped by 2/(1+exp(-10p)) - 1 under the progressive schedule.
    """
    if config.dann_schedule == "constant":
        return config.dann_tradeoff
    return config.dann_tradeoff * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


class DGMethod:
    """A training strategy bound to one fold.

    Attrs:
        config: method and hyperparameters.
        head: domain classifier (DANN only).
        group_weights: group mixture weights (GroupDRO only).
    """

    def __init__(self, config: DGConfig, representation_dim: int, domain_count: int, seed: int):
        """Create the per-fold state the method needs.

        Args:
            config: method and hyperparameters.
            representation_dim: width of z.
            domain_count: number of training source domains M.
            seed: seed of the domain head.
        """
        self.config = config
        self.head: Optional[DomainHead] = None
        self.group_weights: Optional[GroupWeights] = None
        if config.method == Method.DANN and domain_count < 2:
            logger.warning("DANN with a single training domain trains as ERM")
        elif config.method == Method.DANN:
            self.head = domain_head_init(
                representation_dim, domain_count, seed, config.dann_head_hidden
            )
        if config.method == Method.GROUP_DRO:
            self.group_weights = GroupWeights.uniform(domain_count)

    def parameters(self) -> Parameters:
        """Trainable tensors owned by the method.

        Returns:
            The domain head parameters, if any.
        """
        return self.head.parameters() if self.head is not None else []

    def loss(
        self,
        batch: MultiDomainBatch,
        model: Model,
        rng: np.random.Generator,
        progress: float = 0.0,
    ) -> Tensor:
        """Training loss of one minibatch.

        Args:
            batch: minibatch.
            model: network.
            rng: fold generator (Mixup draws).
            progress: fraction of training done.

        Returns:
            The scalar loss.
        """
        config = self.config
        method = config.method
        if method == Method.MIXUP and batch.n >= 2:
            return mixup_loss(mixup_batch(batch, config.mixup_alpha, rng), model)
        if method == Method.GROUP_DRO and self.group_weights is not None:
            loss, self.group_weights = group_dro_step(
                batch, model, self.group_weights, config.dro_eta, config.dro_exact_max
            )
            return loss
        if method == Method.DANN and self.head is not None and len(batch.parts) >= 2:
            return dann_loss(batch, model, self.head, dann_scale(config, progress))
        if method == Method.DDC:
            kernel = config.mmd_kernel
            return _aligned_loss(
                batch, model, config.ddc_weight, lambda p: pairwise_mmd_penalty(p, kernel), 1
            )
        if method == Method.CORAL:
            return _aligned_loss(batch, model, config.coral_weight, pairwise_coral_penalty, 2)
        if method == Method.RSC:
            return rsc_step(batch, model, config.rsc_drop_factor, config.rsc_batch_drop_factor)
        if method != Method.ERM:
            logger.debug("%s falls back to ERM on a batch with %s rows", method.value, batch.n)
        return erm_loss(batch, model)


def representation_alignment(
    model: Model, domain_features: Sequence[np.ndarray], kernel: MMDKernel = MMDKernel()
) -> Dict[str, float]:
    """Pairwise alignment statistics of the representation across domains.

    Args:
        model: network.
        domain_features: model inputs of every domain.
        kernel: MMD kernel.

    Returns:
        {"mmd": mean pairwise MMD², "coral": mean pairwise CORAL loss}.

    Raises:
        InputError: on fewer than 2 domains.
    """
    if len(domain_features) < 2:
        raise InputError("alignment statistics need at least 2 domains")
    with no_grad():
        parts = [model.features(Tensor(rows)) for rows in domain_features]
        return {
            "mmd": pairwise_mmd_penalty(parts, kernel).item(),
            "coral": pairwise_coral_penalty(parts).item(),
        }
