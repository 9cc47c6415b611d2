# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Run configuration: strict JSON parsing over the defaults declared in config.yaml."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from data import SynthConfig
from dg_methods import DGConfig, MMDKernel, parse_method
from exceptions import ConfigurationError
from harness import TrainConfig
from models import ModelSpec

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
SECTIONS = ("train", "method", "baseline", "synthetic", "data")
TOP_LEVEL_KEYS = (*SECTIONS, "seed", "out")
DEFAULT_HIDDEN = {"mlp2": [256], "mlp3": [256, 256], "mlp4": [256, 256, 256], "dbn": [265, 65]}
DEFAULT_BATCH_SIZES = [8, 16, 32]

Defaults = Dict[str, Dict[str, Tuple[str, Any]]]


def load_defaults(path: Union[str, Path] = DEFAULTS_PATH) -> Defaults:
    """Read option types and defaults from config.yaml.

    Args:
        path: options file.

    Returns:
        (type, default) of every option by section and name.
    """
    with open(path, "r", encoding="utf-8") as stream:
        options = yaml.safe_load(stream)["options"]
    return {
        section: {name: (spec["type"], spec["default"]) for name, spec in entries.items()}
        for section, entries in options.items()
    }


DEFAULTS = load_defaults()


@dataclass(frozen=True)
class RunConfig:  # pylint: disable=too-many-instance-attributes
    """Validated run configuration.

    Attrs:
        train: optimizer settings, seeded with the master seed.
        methods: methods to run (table columns).
        baselines: baselines to run (table rows).
        synthetic: generator settings when the data is synthetic.
        manifest: manifest path when the data comes from feature files.
        target_shape: padding shape of loaded samples.
        out: output directory from the document, if any.
        seed: master seed.
        document: the configuration with every default filled in.
    """

    train: TrainConfig
    methods: Tuple[DGConfig, ...]
    baselines: Tuple[ModelSpec, ...]
    synthetic: Optional[SynthConfig]
    manifest: Optional[Path]
    target_shape: Tuple[int, ...]
    out: Optional[Path]
    seed: int
    document: dict


def _check_value(value: Any, kind: str, default: Any, path: str) -> Any:
    """Type-check one option value.

    Args:
        value: value from the document.
        kind: declared type (float, int, string, boolean, list).
        default: declared default; a null default makes the option nullable.
        path: JSON path of the value.

    Returns:
        The value, with ints widened to float for float options.

    Raises:
        ConfigurationError: on a type mismatch.
    """
    if value is None and default is None:
        return None
    is_number = isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "float" and is_number:
        return float(value)
    if kind == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == "string" and isinstance(value, str):
        return value
    if kind == "boolean" and isinstance(value, bool):
        return value
    if kind == "list" and isinstance(value, list):
        if all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
        raise ConfigurationError("expected a list of integers", path)
    raise ConfigurationError(f"expected {kind}, got {type(value).__name__}", path)


def _section(value: Any, section: str, path: str) -> Dict[str, Any]:
    """Fill one section with defaults, rejecting unknown keys.

    Args:
        value: section object from the document, or None.
        section: section name in config.yaml.
        path: JSON path of the section.

    Returns:
        Every option of the section.

    Raises:
        ConfigurationError: on a non-object section, an unknown key or a bad value.
    """
    options = DEFAULTS[section]
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ConfigurationError("expected an object", path)
    for key in value:
        if key not in options:
            raise ConfigurationError(f"unknown key {key!r}", f"{path}.{key}")
    return {
        name: _check_value(value.get(name, default), kind, default, f"{path}.{name}")
        for name, (kind, default) in options.items()
    }


def _entries(value: Any, path: str) -> List[Tuple[Any, str]]:
    """Normalize a string, object or list section into (object, path) pairs.

    Args:
        value: method or baseline entry.
        path: JSON path of the entry.

    Returns:
        One (object, JSON path) pair per entry.

    Raises:
        ConfigurationError: on an empty list.
    """
    if isinstance(value, list):
        if not value:
            raise ConfigurationError("expected at least one entry", path)
        items = [(item, f"{path}[{index}]") for index, item in enumerate(value)]
    else:
        items = [(value, path)]
    return [({"name": item} if isinstance(item, str) else item, where) for item, where in items]


def _located(path: str, build, *args, **kwargs):
    """Construct a value, attaching a JSON path to its validation error.

    Args:
        path: JSON path of the object being built.
        build: constructor.
        args: positional arguments.
        kwargs: keyword arguments.

    Returns:
        The constructed value.

    Raises:
        ConfigurationError: carrying the JSON path.
    """
    try:
        return build(*args, **kwargs)
    except ConfigurationError as exc:
        if exc.json_path:
            raise
        raise ConfigurationError(str(exc), path) from exc


def _method(options: Dict[str, Any], path: str) -> DGConfig:
    """Build a method configuration.

    Args:
        options: filled method section.
        path: JSON path of the section.

    Returns:
        The method configuration.
    """
    method = _located(f"{path}.name", parse_method, options["name"])
    kernel = _located(
        f"{path}.mmd_kernel", MMDKernel, options["mmd_kernel"], options["mmd_bandwidth"]
    )
    fields = {k: v for k, v in options.items() if k not in ("name", "mmd_kernel", "mmd_bandwidth")}
    fields["dann_head_hidden"] = tuple(fields["dann_head_hidden"])
    return _located(path, DGConfig, method=method, mmd_kernel=kernel, **fields)


def _baseline(options: Dict[str, Any], path: str) -> ModelSpec:
    """Build a baseline descriptor.

    Args:
        options: filled baseline section; null widths select the baseline default.
        path: JSON path of the section.

    Returns:
        The descriptor.
    """
    name = options["name"]
    if name not in DEFAULT_HIDDEN:
        raise ConfigurationError(f"unknown baseline {name!r}", f"{path}.name")
    if options["hidden_dims"] is None:
        options["hidden_dims"] = list(DEFAULT_HIDDEN[name])
    return _located(
        path, ModelSpec, **{**options, "hidden_dims": tuple(options["hidden_dims"])}
    )


def parse_document(
    document: Any, base_dir: Union[str, Path] = ".", check_paths: bool = True
) -> RunConfig:
    """Validate a configuration document and apply defaults.

    Args:
        document: decoded JSON.
        base_dir: directory relative paths are resolved against.
        check_paths: require referenced files to exist.

    Returns:
        The run configuration.

    Raises:
        ConfigurationError: naming the JSON path of the first offending value.
    """
    if not isinstance(document, dict):
        raise ConfigurationError("expected an object", "$")
    for key in document:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigurationError(f"unknown key {key!r}", f"$.{key}")
    seed = document.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError("expected a nonnegative integer", "$.seed")
    out = document.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigurationError("expected a string", "$.out")

    train_options = _section(document.get("train"), "train", "$.train")
    train = _located("$.train", TrainConfig, seed=seed, **train_options)
    method_entries = _entries(document.get("method"), "$.method")
    method_options = [_section(item, "method", where) for item, where in method_entries]
    methods = tuple(
        _method(options, where) for options, (_, where) in zip(method_options, method_entries)
    )
    baseline_entries = _entries(document.get("baseline"), "$.baseline")
    baseline_options = [_section(item, "baseline", where) for item, where in baseline_entries]
    baselines = tuple(
        _baseline(options, where)
        for options, (_, where) in zip(baseline_options, baseline_entries)
    )

    data_options = _section(document.get("data"), "data", "$.data")
    if len(data_options["target_shape"]) != 3 or min(data_options["target_shape"]) < 1:
        raise ConfigurationError("expected three positive sizes", "$.data.target_shape")
    manifest, synthetic, synthetic_options = None, None, None
    if data_options["manifest"] is not None:
        if "synthetic" in document:
            raise ConfigurationError("give either data.manifest or synthetic, not both", "$")
        manifest = Path(base_dir) / data_options["manifest"]
        if check_paths and not manifest.is_file():
            raise ConfigurationError(f"manifest {manifest} does not exist", "$.data.manifest")
    else:
        synthetic_options = _section(document.get("synthetic"), "synthetic", "$.synthetic")
        synthetic = _located(
            "$.synthetic",
            SynthConfig,
            **{**synthetic_options, "dims": tuple(synthetic_options["dims"])},
        )

    normalized = {
        "seed": seed,
        "train": train_options,
        "method": method_options,
        "baseline": baseline_options,
        "data": data_options,
        "synthetic": synthetic_options,
    }
    return RunConfig(
        train=train,
        methods=methods,
        baselines=baselines,
        synthetic=synthetic,
        manifest=manifest,
        target_shape=tuple(data_options["target_shape"]),
        out=Path(out) if out is not None else None,
        seed=seed,
        document=normalized,
    )


def parse_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a UTF-8 JSON run configuration file.

    Args:
        path: configuration file.

    Returns:
        The run configuration, relative paths resolved against the file's directory.

    Raises:
        ConfigurationError: on an unreadable file, invalid JSON or invalid content.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        document = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}", "$") from exc
    config = parse_document(document, path.parent)
    logger.debug(
        "Parsed %s: %s methods, %s baselines", path, len(config.methods), len(config.baselines)
    )
    return config


def parse_grid(path: Union[str, Path]) -> Dict[str, List[int]]:
    """Read a sweep grid from YAML or JSON.

    Args:
        path: grid file with "epochs" and optional "batch_sizes" lists.

    Returns:
        {"epochs": [...], "batch_sizes": [...]}, batch sizes defaulting to 8, 16, 32.

    Raises:
        ConfigurationError: on an unreadable file, an unknown key or a non-positive entry.
    """
    try:
        with open(path, "r", encoding="utf-8") as stream:
            document = yaml.safe_load(stream) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read sweep grid {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigurationError("expected an object", "$")
    for key in document:
        if key not in ("epochs", "batch_sizes"):
            raise ConfigurationError(f"unknown key {key!r}", f"$.{key}")
    grid = {
        "epochs": document.get("epochs", []),
        "batch_sizes": document.get("batch_sizes", DEFAULT_BATCH_SIZES),
    }
    for key, values in grid.items():
        if (
            not isinstance(values, list)
            or not values
            or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in values)
        ):
            raise ConfigurationError("expected a non-empty list of positive integers", f"$.{key}")
    return grid
