# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Baseline classifiers: MLP-k, a two-RBM deep belief network and the DANN domain head."""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.preprocessing import MinMaxScaler

from exceptions import ConfigurationError, DimensionError, InputError, LoadError
from tensor_core import Tensor, affine, relu, sigmoid

logger = logging.getLogger(__name__)

CLASS_COUNT = 3
FULL_SCALE_DBN_HIDDEN = (23 * 23 * 5, 18 * 18 * 2)
CHECKPOINT_MAGIC = b"DGFM"
CHECKPOINT_VERSION = 1
BASELINES = ("mlp2", "mlp3", "mlp4", "dbn")

Parameters = List[Tuple[str, Tensor]]


@dataclass
class Linear:
    """Fully connected layer.

    Attrs:
        weight: matrix d_in×d_out.
        bias: vector d_out.
    """

    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        """Apply the layer.

        Args:
            x: batch n×d_in.

        Returns:
            The n×d_out output.
        """
        return affine(x, self.weight, self.bias)

    @property
    def in_features(self) -> int:
        """Input width."""
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        """Output width."""
        return self.weight.shape[1]


def _uniform_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Linear:
    """Draw a layer from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Args:
        rng: random generator.
        fan_in: input width.
        fan_out: output width.

    Returns:
        The initialized layer.
    """
    bound = 1.0 / math.sqrt(fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    bias = rng.uniform(-bound, bound, size=fan_out)
    return Linear(Tensor(weight, requires_grad=True), Tensor(bias, requires_grad=True))


def _check_widths(widths: Sequence[int]) -> None:
    """Reject non-positive layer widths.

    Args:
        widths: layer widths.

    Raises:
        ConfigurationError: if any width is not a positive integer.
    """
    for width in widths:
        if int(width) != width or width <= 0:
            raise ConfigurationError(f"layer widths must be positive integers, got {list(widths)}")


class MLPModel:
    """Stack of fully connected layers with a representation tap.

    The representation z is the activated output of the penultimate layer and
    the final layer maps z to the class logits.

    Attrs:
        layers: fully connected layers, input to output.
        activation: hidden activation, "relu" or "sigmoid".
    """

    def __init__(self, layers: List[Linear], activation: str = "relu"):
        """Build the model from existing layers.

        Args:
            layers: fully connected layers, input to output.
            activation: hidden activation, "relu" or "sigmoid".

        Raises:
            ConfigurationError: on fewer than 2 layers or an unknown activation.
            DimensionError: if consecutive layer widths do not chain.
        """
        if len(layers) < 2:
            raise ConfigurationError(f"an MLP needs at least 2 layers, got {len(layers)}")
        if activation not in ("relu", "sigmoid"):
            raise ConfigurationError(f"unknown activation {activation!r}")
        for index, (lower, upper) in enumerate(zip(layers, layers[1:])):
            if lower.out_features != upper.in_features:
                raise DimensionError(
                    f"layer {index} outputs {lower.out_features} values, "
                    f"layer {index + 1} expects {upper.in_features}"
                )
        self.layers = layers
        self.activation = activation
        self._activate = relu if activation == "relu" else sigmoid

    @property
    def layer_count(self) -> int:
        """Number of fully connected layers."""
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        """Width of the input."""
        return self.layers[0].in_features

    @property
    def representation_dim(self) -> int:
        """Width of the representation z."""
        return self.layers[-1].in_features

    @property
    def class_count(self) -> int:
        """Number of logits."""
        return self.layers[-1].out_features

    @property
    def layer_widths(self) -> List[int]:
        """Size chain from input to logits."""
        return [self.input_dim] + [layer.out_features for layer in self.layers]

    def features(self, batch: Tensor) -> Tensor:
        """Compute the representation z.

        Args:
            batch: matrix n×input_dim.

        Returns:
            The n×d_z representation.
        """
        hidden = batch
        for layer in self.layers[:-1]:
            hidden = self._activate(layer(hidden))
        return hidden

    def head(self, z: Tensor) -> Tensor:
        """Task component mapping a representation to logits.

        Args:
            z: matrix n×d_z.

        Returns:
            The n×class_count logits.
        """
        return self.layers[-1](z)

    def forward(self, batch: Tensor) -> Tuple[Tensor, Tensor]:
        """Compute representation and logits on one graph.

        Args:
            batch: matrix n×input_dim.

        Returns:
            (z, logits).
        """
        z = self.features(batch)
        return z, self.head(z)

    def parameters(self) -> Parameters:
        """Named trainable tensors in declaration order.

        Returns:
            (name, tensor) pairs; weights end in ".weight", biases in ".bias".
        """
        named: Parameters = []
        for index, layer in enumerate(self.layers):
            named.append((f"layers.{index}.weight", layer.weight))
            named.append((f"layers.{index}.bias", layer.bias))
        return named

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Snapshot the parameter values.

        Returns:
            Copies of every parameter payload by name.
        """
        return {name: tensor.numpy() for name, tensor in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Restore parameter values from a snapshot.

        Args:
            state: payloads by name, as returned by state_dict.

        Raises:
            DimensionError: if a payload shape differs from the parameter shape.
        """
        for name, tensor in self.parameters():
            values = state[name]
            if values.shape != tensor.shape:
                raise DimensionError(
                    f"{name}: snapshot {values.shape} vs parameter {tensor.shape}"
                )
            tensor.data[...] = values

    def describe(self) -> dict:
        """Architecture descriptor stored in checkpoints.

        Returns:
            JSON-serializable description.
        """
        return {"kind": "mlp", "activation": self.activation, "layer_widths": self.layer_widths}


def mlp_init(
    input_dim: int,
    hidden_dims: Sequence[int],
    class_count: int,
    seed: int,
    activation: str = "relu",
) -> MLPModel:
    """Create an MLP with len(hidden_dims) + 1 fully connected layers.

    Args:
        input_dim: width of the input.
        hidden_dims: widths of the hidden layers, at least one.
        class_count: number of classes.
        seed: initialization seed.
        activation: hidden activation.

    Returns:
        The initialized model.

    Raises:
        ConfigurationError: on empty hidden_dims or non-positive dimensions.
    """
    if len(hidden_dims) < 1:
        raise ConfigurationError("an MLP needs at least one hidden layer")
    widths = [input_dim, *hidden_dims, class_count]
    _check_widths(widths)
    rng = np.random.default_rng(seed)
    layers = [_uniform_linear(rng, fan_in, fan_out) for fan_in, fan_out in zip(widths, widths[1:])]
    return MLPModel(layers, activation=activation)


def mlp_forward(model: MLPModel, batch: Tensor) -> Tuple[Tensor, Tensor]:
    """Run an MLP on a batch.

    Args:
        model: the network.
        batch: matrix n×input_dim.

    Returns:
        (z, logits).

    Raises:
        DimensionError: if the batch width differs from the input width.
    """
    if batch.data.ndim != 2 or batch.shape[1] != model.input_dim:
        raise DimensionError(f"batch width {batch.shape[-1]} differs from input {model.input_dim}")
    return model.forward(batch)


def parameter_count(widths: Sequence[int]) -> int:
    """Number of weights and biases of a fully connected size chain.

    Args:
        widths: layer widths from input to output.

    Returns:
        The parameter count.
    """
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(widths, widths[1:]))


@dataclass(frozen=True)
class RBM:
    """Bernoulli restricted Boltzmann machine.

    Attrs:
        weight: matrix visible×hidden.
        visible_bias: vector visible.
        hidden_bias: vector hidden.
    """

    weight: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        """Check the parameter shapes.

        Raises:
            DimensionError: if the bias sizes do not match the weight matrix.
        """
        visible, hidden = self.weight.shape
        if self.visible_bias.shape != (visible,) or self.hidden_bias.shape != (hidden,):
            raise DimensionError(
                f"RBM biases {self.visible_bias.shape}/{self.hidden_bias.shape} "
                f"do not match weight {self.weight.shape}"
            )

    @property
    def visible(self) -> int:
        """Number of visible units."""
        return self.weight.shape[0]

    @property
    def hidden(self) -> int:
        """Number of hidden units."""
        return self.weight.shape[1]

    def hidden_probabilities(self, visible: np.ndarray) -> np.ndarray:
        """Compute p(h=1 | v).

        Args:
            visible: batch n×visible.

        Returns:
            The n×hidden activation probabilities.
        """
        return sigmoid(Tensor(visible @ self.weight + self.hidden_bias)).data

    def visible_probabilities(self, hidden: np.ndarray) -> np.ndarray:
        """Compute p(v=1 | h).

        Args:
            hidden: batch n×hidden.

        Returns:
            The n×visible activation probabilities.
        """
        return sigmoid(Tensor(hidden @ self.weight.T + self.visible_bias)).data


def rbm_init(visible: int, hidden: int, seed: int, scale: float = 0.01) -> RBM:
    """Create an RBM with N(0, scale²) weights and zero biases.

    Args:
        visible: number of visible units.
        hidden: number of hidden units.
        seed: initialization seed.
        scale: weight standard deviation.

    Returns:
        The RBM.
    """
    _check_widths([visible, hidden])
    rng = np.random.default_rng(seed)
    return RBM(rng.normal(0.0, scale, (visible, hidden)), np.zeros(visible), np.zeros(hidden))


def rbm_cd1_step(
    rbm: RBM, batch: np.ndarray, lr: float, rng: np.random.Generator
) -> Tuple[RBM, float]:
    """One contrastive-divergence step with a single Gibbs sweep.

    Args:
        rbm: current machine.
        batch: visible data n×visible scaled to [0, 1].
        lr: learning rate.
        rng: generator used to sample the hidden state.

    Returns:
        (updated RBM, mean squared reconstruction error).

    Raises:
        InputError: if batch values fall outside [0, 1].
        DimensionError: if the batch width differs from the visible size.
    """
    v0 = np.asarray(batch, dtype=np.float64)
    if v0.ndim != 2 or v0.shape[1] != rbm.visible:
        raise DimensionError(f"batch shape {v0.shape} vs {rbm.visible} visible units")
    if np.any(v0 < 0.0) or np.any(v0 > 1.0):
        raise InputError("RBM inputs must lie in [0, 1]")
    n = v0.shape[0]
    h0 = (rng.random((n, rbm.hidden)) < rbm.hidden_probabilities(v0)).astype(np.float64)
    v1 = rbm.visible_probabilities(h0)
    h1 = rbm.hidden_probabilities(v1)
    error = float(np.mean((v0 - v1) ** 2))
    updated = RBM(
        rbm.weight + lr * (v0.T @ h0 - v1.T @ h1) / n,
        rbm.visible_bias + lr * np.mean(v0 - v1, axis=0),
        rbm.hidden_bias + lr * np.mean(h0 - h1, axis=0),
    )
    return updated, error


def pretrain_rbm(
    rbm: RBM,
    data: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> Tuple[RBM, List[float]]:
    """Train an RBM with CD-1 over shuffled minibatches.

    Args:
        rbm: initial machine.
        data: visible data scaled to [0, 1].
        epochs: passes over data.
        lr: learning rate.
        batch_size: rows per CD-1 step.
        rng: generator for shuffling and sampling.

    Returns:
        (trained RBM, sample-weighted mean reconstruction error per epoch).
    """
    errors = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch_size):
            rows = data[order[start : start + batch_size]]
            rbm, error = rbm_cd1_step(rbm, rows, lr, rng)
            total += error * len(rows)
        errors.append(total / len(data))
        logger.debug("RBM %sx%s epoch %s: error %.6f", rbm.visible, rbm.hidden, epoch, errors[-1])
    return rbm, errors


class DBNModel:
    """Two stacked RBMs fine-tuned as a sigmoid MLP with a linear classifier.

    Attrs:
        rbms: the two machines the hidden layers were taken from.
        network: sigmoid MLP used for training and inference.
        pretrained: whether CD-1 pretraining ran before the network was built.
        scaler: min-max scaler applied to raw features before the network.
    """

    def __init__(
        self,
        rbms: Optional[Tuple[RBM, RBM]],
        network: MLPModel,
        pretrained: bool,
        scaler: Optional[MinMaxScaler] = None,
    ):
        """Wrap a built network.

        Args:
            rbms: the machines, when available.
            network: sigmoid MLP with three layers.
            pretrained: whether CD-1 pretraining ran.
            scaler: fitted min-max scaler, or None when inputs are already in [0, 1].
        """
        self.rbms = rbms
        self.network = network
        self.pretrained = pretrained
        self.scaler = scaler

    def features(self, batch: Tensor) -> Tensor:
        """Compute the representation z (second hidden layer).

        Args:
            batch: scaled rows n×input_dim.

        Returns:
            The n×d_z representation.
        """
        return self.network.features(batch)

    def head(self, z: Tensor) -> Tensor:
        """Apply the classification layer.

        Args:
            z: matrix n×d_z.

        Returns:
            The logits.
        """
        return self.network.head(z)

    def forward(self, batch: Tensor) -> Tuple[Tensor, Tensor]:
        """Compute representation and logits.

        Args:
            batch: scaled rows n×input_dim.

        Returns:
            (z, logits).
        """
        return self.network.forward(batch)

    def parameters(self) -> Parameters:
        """Named trainable tensors of the fine-tuned network."""
        return self.network.parameters()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Snapshot the network parameters."""
        return self.network.state_dict()

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Restore the network parameters.

        Args:
            state: payloads by name.
        """
        self.network.load_state_dict(state)

    @property
    def input_dim(self) -> int:
        """Width of the input."""
        return self.network.input_dim

    @property
    def representation_dim(self) -> int:
        """Width of the representation z."""
        return self.network.representation_dim

    @property
    def layer_widths(self) -> List[int]:
        """Size chain from input to logits."""
        return self.network.layer_widths

    def transform(self, features: np.ndarray) -> np.ndarray:
        """Apply the input scaling the network was trained with.

        Args:
            features: raw feature rows.

        Returns:
            Rows scaled to [0, 1], or the input when no scaler is set.
        """
        return features if self.scaler is None else self.scaler.transform(features)

    def describe(self) -> dict:
        """Architecture descriptor stored in checkpoints.

        Returns:
            JSON-serializable description.
        """
        descriptor = {
            "kind": "dbn",
            "activation": "sigmoid",
            "layer_widths": self.layer_widths,
            "pretrained": self.pretrained,
        }
        if self.scaler is not None:
            descriptor["scaler"] = {
                "data_min": self.scaler.data_min_.tolist(),
                "data_max": self.scaler.data_max_.tolist(),
            }
        return descriptor


def dbn_build(
    rbm1: RBM, rbm2: RBM, class_count: int, seed: int, pretrained: bool = True
) -> DBNModel:
    """Turn two stacked RBMs into a classifier.

    Args:
        rbm1: first machine (input → first hidden layer).
        rbm2: second machine (first → second hidden layer).
        class_count: number of classes.
        seed: seed of the randomly initialized classification layer.
        pretrained: whether the machines were trained.

    Returns:
        The DBN; its hidden layers copy the RBM weights and hidden biases.

    Raises:
        ConfigurationError: if rbm1.hidden differs from rbm2.visible.
    """
    if rbm1.hidden != rbm2.visible:
        raise ConfigurationError(
            f"RBM size chain broken: {rbm1.visible}→{rbm1.hidden} "
            f"then {rbm2.visible}→{rbm2.hidden}"
        )
    rng = np.random.default_rng(seed)
    layers = [
        Linear(Tensor(rbm.weight, requires_grad=True), Tensor(rbm.hidden_bias, requires_grad=True))
        for rbm in (rbm1, rbm2)
    ]
    layers.append(_uniform_linear(rng, rbm2.hidden, class_count))
    return DBNModel((rbm1, rbm2), MLPModel(layers, activation="sigmoid"), pretrained)


@dataclass
class DomainHead:
    """Domain classifier mapping a representation to one logit per source domain.

    Attrs:
        layers: fully connected layers, ReLU between them.
    """

    layers: List[Linear]

    @property
    def domain_count(self) -> int:
        """Number of source domains."""
        return self.layers[-1].out_features

    def parameters(self) -> Parameters:
        """Named trainable tensors.

        Returns:
            (name, tensor) pairs.
        """
        named: Parameters = []
        for index, layer in enumerate(self.layers):
            named.append((f"domain_head.{index}.weight", layer.weight))
            named.append((f"domain_head.{index}.bias", layer.bias))
        return named


def domain_head_init(
    representation_dim: int, domain_count: int, seed: int, hidden_dims: Sequence[int] = ()
) -> DomainHead:
    """Create a domain head.

    Args:
        representation_dim: width of z.
        domain_count: number of source domains M.
        seed: initialization seed.
        hidden_dims: optional hidden ReLU layer widths.

    Returns:
        The head.

    Raises:
        ConfigurationError: if domain_count < 2.
    """
    if domain_count < 2:
        raise ConfigurationError(f"a domain head needs at least 2 domains, got {domain_count}")
    widths = [representation_dim, *hidden_dims, domain_count]
    _check_widths(widths)
    rng = np.random.default_rng(seed)
    return DomainHead([_uniform_linear(rng, a, b) for a, b in zip(widths, widths[1:])])


def domain_head_forward(head: DomainHead, z: Tensor) -> Tensor:
    """Domain logits for a batch of representations.

    Args:
        head: the domain classifier.
        z: representations n×d_z.

    Returns:
        The n×M domain logits.
    """
    hidden = z
    for layer in head.layers[:-1]:
        hidden = relu(layer(hidden))
    return head.layers[-1](hidden)


def baseline_label(name: str) -> str:
    """Display name of a baseline id, e.g. "MLP-3" for mlp3."""
    return "DBN" if name == "dbn" else f"MLP-{name[-1]}"


@dataclass(frozen=True)
class ModelSpec:
    """Baseline descriptor.

    Attrs:
        name: one of mlp2, mlp3, mlp4, dbn.
        hidden_dims: hidden layer widths; length k-1 for mlp-k, 2 for dbn.
        pretrain_epochs: CD-1 epochs per RBM (dbn only).
        rbm_learning_rate: CD-1 learning rate (dbn only).
        rbm_batch_size: CD-1 minibatch size (dbn only).
    """

    name: str = "mlp2"
    hidden_dims: Tuple[int, ...] = field(default=(256,))
    pretrain_epochs: int = 10
    rbm_learning_rate: float = 0.01
    rbm_batch_size: int = 32

    def __post_init__(self):
        """Validate the descriptor.

        Raises:
            ConfigurationError: on an unknown baseline or a wrong hidden layer count.
        """
        if self.name not in BASELINES:
            raise ConfigurationError(
                f"unknown baseline {self.name!r}, expected one of {BASELINES}"
            )
        expected = 2 if self.name == "dbn" else int(self.name[-1]) - 1
        if len(self.hidden_dims) != expected:
            raise ConfigurationError(
                f"{self.name} needs {expected} hidden widths, got {list(self.hidden_dims)}"
            )
        _check_widths(self.hidden_dims)
        if self.pretrain_epochs < 0 or self.rbm_learning_rate < 0 or self.rbm_batch_size < 1:
            raise ConfigurationError("RBM pretraining settings must be nonnegative")

    @property
    def label(self) -> str:
        """Display name as used in result tables."""
        return baseline_label(self.name)

    def layer_widths(self, input_dim: int, class_count: int = CLASS_COUNT) -> List[int]:
        """Size chain of the network without allocating it.

        Args:
            input_dim: width of the input.
            class_count: number of classes.

        Returns:
            Widths from input to logits.
        """
        return [input_dim, *self.hidden_dims, class_count]


Model = Union[MLPModel, DBNModel]


def build_model(
    spec: ModelSpec, train_features: np.ndarray, class_count: int, seed: int
) -> Model:
    """Construct a baseline, pretraining DBN layers on the training features.

    Args:
        spec: baseline descriptor.
        train_features: training rows n×input_dim (used by DBN scaling and pretraining).
        class_count: number of classes.
        seed: initialization seed.

    Returns:
        The model, ready for supervised training.
    """
    input_dim = train_features.shape[1]
    if spec.name != "dbn":
        return mlp_init(input_dim, spec.hidden_dims, class_count, seed)
    scaler = MinMaxScaler(clip=True).fit(train_features)
    if spec.pretrain_epochs == 0:
        network = mlp_init(input_dim, spec.hidden_dims, class_count, seed, activation="sigmoid")
        return DBNModel(None, network, pretrained=False, scaler=scaler)
    visible = scaler.transform(train_features)
    rng = np.random.default_rng(seed)
    first, second = spec.hidden_dims
    rbm1, errors1 = pretrain_rbm(
        rbm_init(input_dim, first, seed),
        visible,
        spec.pretrain_epochs,
        spec.rbm_learning_rate,
        spec.rbm_batch_size,
        rng,
    )
    rbm2, errors2 = pretrain_rbm(
        rbm_init(first, second, seed + 1),
        rbm1.hidden_probabilities(visible),
        spec.pretrain_epochs,
        spec.rbm_learning_rate,
        spec.rbm_batch_size,
        rng,
    )
    logger.info(
        "DBN pretraining: reconstruction error %.5f → %.5f (layer 1), %.5f → %.5f (layer 2)",
        errors1[0],
        errors1[-1],
        errors2[0],
        errors2[-1],
    )
    model = dbn_build(rbm1, rbm2, class_count, seed, pretrained=True)
    model.scaler = scaler
    return model


def model_inputs(model: Model, features: np.ndarray) -> np.ndarray:
    """Map raw feature rows to what the model consumes.

    Args:
        model: the network.
        features: raw feature rows.

    Returns:
        Scaled rows for a DBN, the rows unchanged otherwise.
    """
    return model.transform(features) if isinstance(model, DBNModel) else features


def save_checkpoint(path: Union[str, Path], model: Model) -> None:
    """Write a model to a DGFM checkpoint.

    Args:
        path: destination file.
        model: the network.
    """
    descriptor = json.dumps(model.describe(), sort_keys=True).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(descriptor)),
        descriptor,
    ]
    chunks.extend(tensor.data.astype("<f8").tobytes() for _, tensor in model.parameters())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Union[str, Path]) -> Model:
    """Read a model from a DGFM checkpoint.

    Args:
        path: checkpoint file.

    Returns:
        The reconstructed network.

    Raises:
        LoadError: on an unreadable file, a bad header, a corrupt descriptor or a
            truncated payload.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint: {exc.strerror}", str(path)) from exc
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise LoadError("not a DGFM checkpoint", str(path))
    version, length = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {version}", str(path))
    if len(raw) < 12 + length or (len(raw) - 12 - length) % 8:
        raise LoadError("truncated checkpoint", str(path))
    try:
        descriptor = json.loads(raw[12 : 12 + length].decode("utf-8"))
        widths = [int(w) for w in descriptor["layer_widths"]]
        activation, kind = descriptor["activation"], descriptor["kind"]
        pretrained = bool(descriptor.get("pretrained", False))
        bounds = descriptor.get("scaler")
        if bounds is not None:
            bounds = np.stack(
                [np.asarray(bounds["data_min"], float), np.asarray(bounds["data_max"], float)]
            )
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"corrupt checkpoint descriptor: {exc}", str(path)) from exc
    if activation not in ("relu", "sigmoid") or kind not in ("mlp", "dbn"):
        raise LoadError(f"unknown network {kind!r} with {activation!r} units", str(path))
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + length)
    if len(widths) < 2 or payload.size != parameter_count(widths):
        raise LoadError(
            f"expected {parameter_count(widths)} parameters, found {payload.size}", str(path)
        )
    layers, offset = [], 0
    for fan_in, fan_out in zip(widths, widths[1:]):
        weight = payload[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = payload[offset : offset + fan_out]
        offset += fan_out
        layers.append(Linear(Tensor(weight, requires_grad=True), Tensor(bias, requires_grad=True)))
    network = MLPModel(layers, activation=activation)
    if kind != "dbn":
        return network
    scaler = None if bounds is None else MinMaxScaler(clip=True).fit(bounds)
    return DBNModel(None, network, pretrained, scaler)
