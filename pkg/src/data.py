# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""EEG feature data: DE feature files, manifests, padding, pooling and a synthetic generator."""

import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from exceptions import ConfigurationError, ContractError, InputError, LoadError

logger = logging.getLogger(__name__)

TARGET_SHAPE = (62, 250, 5)
FEATURE_MAGIC = b"DGF1"
LABEL_NAMES = ("negative", "neutral", "positive")
MANIFEST_COLUMNS = ["subject", "session", "trial", "label", "path"]
REPRESENTATIONS = ("pooled", "flat")

Identity = Tuple[int, int, int]


def write_atomic(path: Union[str, Path], payload: Union[bytes, str]) -> None:
    """Write a file through a temporary sibling and a rename.

    Args:
        path: destination.
        payload: bytes, or text encoded as UTF-8.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    handle, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(data)
        os.replace(temporary, path)
    except BaseException:
        Path(temporary).unlink(missing_ok=True)
        raise


@dataclass(frozen=True)
class EEGSample:
    """One trial of DE features.

    Attrs:
        features: array (channels, windows, bands).
        label: 0 negative, 1 neutral, 2 positive.
        subject: subject id.
        session: session id.
        trial: trial id.
        valid_windows: windows holding data; the rest is zero padding.
    """

    features: np.ndarray
    label: int
    subject: int
    session: int
    trial: int
    valid_windows: Optional[int] = None

    def __post_init__(self):
        """Validate the sample.

        Raises:
            InputError: on a label outside {0, 1, 2} or a non 3-axis feature array.
        """
        if self.label not in (0, 1, 2):
            raise InputError(f"label must be 0, 1 or 2, got {self.label}")
        if self.features.ndim != 3:
            raise InputError(f"features must have 3 axes, got shape {self.features.shape}")
        if self.valid_windows is None:
            object.__setattr__(self, "valid_windows", self.features.shape[1])

    @property
    def identity(self) -> Identity:
        """(subject, session, trial)."""
        return (self.subject, self.session, self.trial)


@dataclass(frozen=True)
class Domain:
    """All samples of one subject.

    Attrs:
        subject: subject id.
        samples: the subject's samples.
    """

    subject: int
    samples: Tuple[EEGSample, ...]

    def __post_init__(self):
        """Validate the domain.

        Raises:
            InputError: on an empty domain or a sample of another subject.
        """
        if not self.samples:
            raise InputError(f"domain {self.subject} has no samples")
        strangers = {s.subject for s in self.samples} - {self.subject}
        if strangers:
            raise InputError(
                f"domain {self.subject} holds samples of subjects {sorted(strangers)}"
            )

    @property
    def identities(self) -> List[Identity]:
        """Identity of every sample."""
        return [sample.identity for sample in self.samples]


def pad_to_shape(sample: EEGSample, target: Sequence[int] = TARGET_SHAPE) -> EEGSample:
    """Append zeros at the high end of every axis up to the target shape.

    Args:
        sample: sample no larger than target on any axis.
        target: (channels, windows, bands).

    Returns:
        The padded sample; its valid window count is carried over.

    Raises:
        InputError: if an axis exceeds the target.
    """
    widths = []
    for axis, (size, bound) in enumerate(zip(sample.features.shape, target)):
        if size > bound:
            name = ("channels", "windows", "bands")[axis]
            raise InputError(f"{name} axis has {size} entries, exceeding target {bound}")
        widths.append((0, bound - size))
    if all(extra == 0 for _, extra in widths):
        return sample
    return EEGSample(
        np.pad(sample.features, widths),
        sample.label,
        sample.subject,
        sample.session,
        sample.trial,
        sample.valid_windows,
    )


def pool_features(sample: EEGSample) -> np.ndarray:
    """Mean over the valid windows of every (channel, band) cell.

    Args:
        sample: padded sample.

    Returns:
        Vector of channels·bands values, channel-major.

    Raises:
        InputError: if the sample has no valid window.
    """
    if not sample.valid_windows:
        raise InputError(f"sample {sample.identity} has no valid windows")
    valid = sample.features[:, : sample.valid_windows, :]
    return valid.mean(axis=1).reshape(-1)


def de_from_variance(sigma2: float) -> float:
    """Differential entropy of a Gaussian band signal, 0.5·ln(2πe·σ²).

    Args:
        sigma2: band variance.

    Returns:
        The entropy in nats.

    Raises:
        InputError: if sigma2 is not positive.
    """
    if not sigma2 > 0:
        raise InputError(f"variance must be positive, got {sigma2}")
    return 0.5 * math.log(2 * math.pi * math.e * sigma2)


def de_features(band_variances: np.ndarray) -> np.ndarray:
    """Elementwise differential entropy of an array of band variances.

    Args:
        band_variances: positive variances of any shape.

    Returns:
        DE values of the same shape.

    Raises:
        InputError: if any variance is not positive.
    """
    variances = np.asarray(band_variances, dtype=np.float64)
    if not np.all(variances > 0):
        raise InputError("band variances must be positive")
    return 0.5 * np.log(2 * np.pi * np.e * variances)


def write_feature_file(path: Union[str, Path], features: np.ndarray) -> None:
    """Encode a (channels, windows, bands) array as a DGF1 file.

    Args:
        path: destination.
        features: 3-axis array.
    """
    header = FEATURE_MAGIC + struct.pack("<III", *features.shape)
    write_atomic(path, header + np.ascontiguousarray(features, dtype="<f8").tobytes())


def read_feature_file(path: Union[str, Path], record: Optional[int] = None) -> np.ndarray:
    """Decode a DGF1 file.

    Args:
        path: file to read.
        record: manifest record, for error messages.

    Returns:
        The float64 array (channels, windows, bands).

    Raises:
        LoadError: if the file is missing, has a wrong magic or a truncated payload.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read feature file: {exc.strerror}", str(path), record) from exc
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise LoadError("not a DGF1 feature file", str(path), record)
    shape = struct.unpack_from("<III", raw, 4)
    expected = 16 + 8 * math.prod(shape)
    if len(raw) != expected:
        raise LoadError(
            f"payload of {len(raw) - 16} bytes does not match shape {shape}", str(path), record
        )
    return np.frombuffer(raw, dtype="<f8", offset=16).reshape(shape).astype(np.float64)


def _parse_label(value: str) -> int:
    """Map a manifest label to its class index.

    Args:
        value: class name (any case) or 0, 1, 2.

    Returns:
        The class index.

    Raises:
        ValueError: on anything else.
    """
    text = value.strip().lower()
    if text in LABEL_NAMES:
        return LABEL_NAMES.index(text)
    if text in ("0", "1", "2"):
        return int(text)
    raise ValueError(f"label {value!r} is not one of {LABEL_NAMES} or 0, 1, 2")


def load_domains(
    manifest: Union[str, Path], target_shape: Sequence[int] = TARGET_SHAPE
) -> List[Domain]:
    """Read every feature file listed in a manifest and group the samples by subject.

    Paths in the manifest are relative to the manifest's directory.

    Args:
        manifest: CSV with header subject,session,trial,label,path.
        target_shape: shape samples are padded to.

    Returns:
        Domains in ascending subject order, samples in manifest order.

    Raises:
        LoadError: on a missing or empty manifest, a bad record, a missing
            feature file, a shape mismatch or a duplicate identity.
    """
    manifest = Path(manifest)
    try:
        table = pd.read_csv(manifest, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise LoadError("manifest not found", str(manifest)) from exc
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise LoadError(f"unreadable manifest: {exc}", str(manifest)) from exc
    if [column.strip() for column in table.columns] != MANIFEST_COLUMNS:
        raise LoadError(f"header must be {','.join(MANIFEST_COLUMNS)}", str(manifest))
    if table.empty:
        raise LoadError("manifest lists no samples", str(manifest))
    table.columns = MANIFEST_COLUMNS
    grouped: Dict[int, List[EEGSample]] = {}
    seen = set()
    for record, row in enumerate(table.itertuples(index=False), start=1):
        try:
            identity = (int(row.subject), int(row.session), int(row.trial))
            label = _parse_label(row.label)
        except ValueError as exc:
            raise LoadError(str(exc), str(manifest), record) from exc
        if identity in seen:
            raise LoadError(f"duplicate sample {identity}", str(manifest), record)
        seen.add(identity)
        path = manifest.parent / row.path.strip()
        features = read_feature_file(path, record)
        try:
            sample = EEGSample(features, label, *identity)
            if (features.shape[0], features.shape[2]) != (target_shape[0], target_shape[2]):
                raise InputError(
                    f"shape {features.shape} does not match target {tuple(target_shape)}"
                )
            sample = pad_to_shape(sample, target_shape)
        except InputError as exc:
            raise LoadError(str(exc), str(path), record) from exc
        grouped.setdefault(identity[0], []).append(sample)
    domains = [Domain(subject, tuple(grouped[subject])) for subject in sorted(grouped)]
    logger.info(
        "Loaded %s samples of %s subjects from %s", len(table), len(domains), manifest
    )
    return domains


def write_dataset(domains: Sequence[Domain], out_dir: Union[str, Path]) -> Path:
    """Write domains as DGF1 files under features/ plus a manifest.csv.

    Only the valid windows of each sample are stored, so loading pads them back.

    Args:
        domains: domains to write.
        out_dir: output directory.

    Returns:
        Path of the manifest.
    """
    out_dir = Path(out_dir)
    rows = []
    for domain in domains:
        for sample in domain.samples:
            name = f"s{sample.subject:02d}_{sample.session}_{sample.trial:02d}.dgf"
            write_feature_file(
                out_dir / "features" / name, sample.features[:, : sample.valid_windows, :]
            )
            rows.append(
                (sample.subject, sample.session, sample.trial, sample.label, f"features/{name}")
            )
    manifest = out_dir / "manifest.csv"
    table = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    write_atomic(manifest, table.to_csv(index=False, lineterminator="\n"))
    logger.info("Wrote %s samples to %s", len(rows), out_dir)
    return manifest


@dataclass(frozen=True)
class SynthConfig:  # pylint: disable=too-many-instance-attributes
    """Synthetic multi-domain generator settings.

    Attrs:
        domains: number of subjects M.
        samples_per_class: samples of each class per subject.
        dims: (channels, windows, bands) of a sample.
        class_separation: scale of the class prototypes.
        noise: per-sample noise scale.
        domain_shift: scale σ_dom of the per-domain offset.
        mixing: scale ε of the per-domain mixing perturbation.
        seed: generator seed.
    """

    domains: int = 15
    samples_per_class: int = 15
    dims: Tuple[int, int, int] = (62, 2, 5)
    class_separation: float = 0.5
    noise: float = 1.0
    domain_shift: float = 0.5
    mixing: float = 0.02
    seed: int = 0

    def __post_init__(self):
        """Validate the settings.

        Raises:
            ConfigurationError: on a negative scale or a non-positive size.
        """
        for name in ("class_separation", "noise", "domain_shift", "mixing"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.domains < 1 or self.samples_per_class < 1:
            raise ConfigurationError("domains and samples_per_class must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigurationError(f"dims must be three positive sizes, got {self.dims}")


def _synthetic_identity(index: int) -> Tuple[int, int]:
    """Session and trial of the index-th sample of a synthetic subject.

    Sessions cycle through 1..3 in blocks of 15 trials; trial numbers keep counting past 15 once
    every session is full, so identities stay unique.
    """
    block, slot = divmod(index, 15)
    return block % 3 + 1, 15 * (block // 3) + slot + 1


def synth_generate(cfg: SynthConfig) -> List[Domain]:
    """Draw a labelled multi-domain dataset.

    Domain d maps a sample x = μ_c + noise to A_d·x + δ_d with A_d = I + ε·R_d.

    Args:
        cfg: generator settings.

    Returns:
        One balanced domain per subject, subjects numbered from 1.
    """
    rng = np.random.default_rng(cfg.seed)
    width = math.prod(cfg.dims)
    prototypes = rng.normal(0.0, cfg.class_separation, size=(len(LABEL_NAMES), width))
    labels = np.repeat(np.arange(len(LABEL_NAMES)), cfg.samples_per_class)
    domains = []
    for index in range(cfg.domains):
        offset = rng.normal(0.0, cfg.domain_shift, size=width)
        mixing = np.eye(width) + cfg.mixing * rng.standard_normal((width, width))
        order = rng.permutation(labels)
        clean = prototypes[order] + rng.normal(0.0, cfg.noise, size=(len(order), width))
        rows = clean @ mixing.T + offset
        samples = tuple(
            EEGSample(rows[i].reshape(cfg.dims), int(order[i]), index + 1, *_synthetic_identity(i))
            for i in range(len(order))
        )
        domains.append(Domain(index + 1, samples))
    logger.debug("Generated %s synthetic domains of %s samples", cfg.domains, len(labels))
    return domains


def split_source_domains(
    domains: Sequence[Domain], seed: int
) -> Tuple[List[Domain], List[Domain]]:
    """Split source subjects 4:1 into training and validation domains.

    Args:
        domains: source domains, at least 2.
        seed: shuffle seed.

    Returns:
        (train, val), each in input order; val holds max(1, round(M/5)) subjects.

    Raises:
        ContractError: on fewer than 2 domains.
    """
    count = len(domains)
    if count < 2:
        raise ContractError(f"a 4:1 split needs at least 2 domains, got {count}")
    val_count = max(1, math.floor(count / 5 + 0.5))
    held = set(np.random.default_rng(seed).permutation(count)[:val_count].tolist())
    train = [d for i, d in enumerate(domains) if i not in held]
    val = [d for i, d in enumerate(domains) if i in held]
    return train, val


@dataclass(frozen=True)
class DomainData:
    """Model-ready matrices of one domain.

    Attrs:
        subject: subject id.
        features: matrix n×d.
        labels: class indices of length n.
        identities: (subject, session, trial) of every row.
    """

    subject: int
    features: np.ndarray
    labels: np.ndarray
    identities: Tuple[Identity, ...]


def prepare_domain(domain: Domain, representation: str = "pooled") -> DomainData:
    """Turn a domain into a feature matrix.

    Args:
        domain: padded domain.
        representation: "pooled" (channels·bands means) or "flat" (whole padded sample).

    Returns:
        The domain matrices.

    Raises:
        ConfigurationError: on an unknown representation.
    """
    if representation == "pooled":
        rows = [pool_features(sample) for sample in domain.samples]
    elif representation == "flat":
        rows = [sample.features.reshape(-1) for sample in domain.samples]
    else:
        raise ConfigurationError(
            f"unknown representation {representation!r}, expected one of {REPRESENTATIONS}"
        )
    return DomainData(
        domain.subject,
        np.stack(rows),
        np.array([sample.label for sample in domain.samples], dtype=np.int64),
        tuple(domain.identities),
    )
