# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions raised across the dg-forge modules."""

from typing import Optional


class DGForgeError(Exception):
    """Base class for every error raised by dg-forge."""


class ConfigurationError(DGForgeError):
    """Invalid hyperparameters or run configuration.

    Attrs:
        json_path: JSON path of the offending value, when it comes from a document.
    """

    def __init__(self, msg: str, json_path: Optional[str] = None):
        """Initialize a new instance of the ConfigurationError exception.

        Args:
            msg: Explanation of the error.
            json_path: JSON path of the offending value.
        """
        super().__init__(f"{json_path}: {msg}" if json_path else msg)
        self.json_path = json_path


class DimensionError(DGForgeError):
    """Operand shapes do not conform."""


class ContractError(DGForgeError):
    """A precondition of an operation does not hold."""


class InputError(DGForgeError):
    """Data values outside of what an operation accepts."""


class LoadError(DGForgeError):
    """A feature file or manifest could not be loaded.

    Attrs:
        path: file being read.
        record: manifest record (1-based data row) being processed, if any.
    """

    def __init__(self, msg: str, path: str, record: Optional[int] = None):
        """Initialize a new instance of the LoadError exception.

        Args:
            msg: Explanation of the error.
            path: File being read.
            record: Manifest record being processed.
        """
        location = path if record is None else f"{path} (record {record})"
        super().__init__(f"{location}: {msg}")
        self.path = path
        self.record = record


class NumericalError(DGForgeError):
    """A forward value became non-finite while finite checks are on."""


class OracleError(DGForgeError):
    """The finite-difference oracle evaluated a non-finite value."""


class TrainingError(DGForgeError):
    """Training hit a non-finite gradient.

    Attrs:
        parameter: name of the parameter with the bad gradient.
        step: optimizer step index.
    """

    def __init__(self, parameter: str, step: int):
        """Initialize a new instance of the TrainingError exception.

        Args:
            parameter: Name of the parameter with the bad gradient.
            step: Optimizer step index.
        """
        super().__init__(f"non-finite gradient for {parameter} at step {step}")
        self.parameter = parameter
        self.step = step


class ReportError(DGForgeError):
    """Fold results cannot be aggregated into a report."""
