# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

from typing import Any, Dict, Optional


class QSARError(Exception):
    """Base exception for mtqsar operations

    :param message: a general error message
    :param code: the typed error name, e.g. ``UnclosedRing`` or ``EmptyTask``
    :param details: additional context (offset, file, line, task, ...)
    :type message: string
    :type code: string
    :type details: dict
    """

    def __init__(self, message: str = "", code: str = "", **details: Any) -> None:
        self.message = message
        self.code = code
        self.details: Dict[str, Any] = details

        if message:
            super().__init__(message)
        else:
            super().__init__(code)

    def __str__(self) -> str:
        if self.code and self.message:
            return self.code + ": " + self.message
        return self.message or self.code


class SmilesError(QSARError):
    """A SMILES string could not be parsed. ``offset`` is the byte offset
    into the input where the problem was detected."""

    def __init__(self, message: str = "", code: str = "", offset: int = 0, **details: Any) -> None:
        self.offset = offset
        super().__init__(message, code, offset=offset, **details)


class ChemError(QSARError):
    """Invalid use of molecules or fingerprints (e.g. ``WidthMismatch``)"""


class DataError(QSARError):
    """Ingestion and matrix assembly errors"""


class SplitError(QSARError):
    """Temporal and k-fold splitting errors"""


class TrainingError(QSARError):
    """Model construction and training errors (shapes, bad inputs)"""


class NumericError(TrainingError):
    """Training diverged. The last good checkpoint store is kept in ``store``."""

    def __init__(self, message: str = "", code: str = "", store: Optional[Any] = None, **details: Any) -> None:
        self.store = store
        super().__init__(message, code, **details)


class EvalError(QSARError):
    """AUC and checkpoint selection errors"""


class StatsError(QSARError):
    """Paired comparison errors"""


class AnalysisError(QSARError):
    """Relatedness, size-benefit and covariate-shift analysis errors"""


class ConfigError(QSARError):
    """Experiment configuration or command line errors"""
