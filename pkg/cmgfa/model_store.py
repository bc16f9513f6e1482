"""Versioned text persistence for fitted mixtures of factor analyzers.

Format ``cmgfa-model 1``: a header line followed by ``key = values`` lines
(values whitespace separated, reals written with ``repr``)::

    cmgfa-model 1
    components = 2
    features = 3
    factors = 1
    lower = 0.01            # or "none"
    upper = 6.0             # or "inf" / "none"
    weights = 0.5 0.5
    mean.1 = ...            # d values
    loadings.1.1 = ...      # row j of L_g, q values
    uniquenesses.1 = ...    # d values
    metadata = {...}        # one-line JSON, optional

Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .data_io import atomic_write_text
from .errors import EXIT_DATA, CmgfaError, InvalidArgumentError, ParseError
from .model_core import EigenBounds, MgfaParams

LOGGER = logging.getLogger(__name__)

FORMAT_HEADER = "cmgfa-model"
FORMAT_VERSION = 1


class ModelStoreError(CmgfaError):
    """Raised when a model file has the wrong version or violates parameter invariants."""

    exit_code = EXIT_DATA


@dataclass(frozen=True)
class StoredModel:
    params: MgfaParams
    bounds: Optional[EigenBounds] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def _format_values(values: Any) -> str:
    return " ".join(repr(float(value)) for value in np.ravel(values))


def render_model(params: MgfaParams, *, bounds: Optional[EigenBounds] = None, metadata: Optional[Dict[str, Any]] = None) -> str:
    d, q, n_components = params.dims
    lines = [
        f"{FORMAT_HEADER} {FORMAT_VERSION}",
        f"components = {n_components}",
        f"features = {d}",
        f"factors = {q}",
        f"lower = {repr(bounds.lower) if bounds else 'none'}",
        f"upper = {repr(bounds.upper) if bounds else 'none'}",
        f"weights = {_format_values(params.weights)}",
    ]
    for g in range(n_components):
        lines.append(f"mean.{g + 1} = {_format_values(params.means[g])}")
        for j in range(d):
            lines.append(f"loadings.{g + 1}.{j + 1} = {_format_values(params.loadings[g, j])}")
        lines.append(f"uniquenesses.{g + 1} = {_format_values(params.uniquenesses[g])}")
    if metadata:
        lines.append(f"metadata = {json.dumps(metadata, ensure_ascii=False, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def save_model(
    path: Union[str, Path],
    params: MgfaParams,
    *,
    bounds: Optional[EigenBounds] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Serialize ``params`` (and the bounds used to fit them) to ``path``."""
    target = atomic_write_text(path, render_model(params, bounds=bounds, metadata=metadata))
    LOGGER.info("Saved model to %s", target)
    return target


def _parse_entries(text: str) -> Dict[str, Tuple[int, str]]:
    lines = text.splitlines()
    if not lines:
        raise ModelStoreError("empty_model_file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != FORMAT_HEADER:
        raise ModelStoreError("missing_format_header")
    if header[1] != str(FORMAT_VERSION):
        raise ModelStoreError("unsupported_version", detail=header[1])

    entries: Dict[str, Tuple[int, str]] = {}
    for number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError("malformed_line", row=number)
        key = key.strip()
        if key in entries:
            raise ParseError("duplicate_key", row=number, column=key)
        entries[key] = (number, value.strip())
    return entries


class _Reader:
    def __init__(self, entries: Dict[str, Tuple[int, str]]) -> None:
        self._entries = entries

    def has(self, key: str) -> bool:
        return key in self._entries

    def raw(self, key: str) -> Tuple[int, str]:
        if key not in self._entries:
            raise ParseError("missing_entry", column=key)
        return self._entries[key]

    def integer(self, key: str) -> int:
        number, value = self.raw(key)
        try:
            return int(value)
        except ValueError as exc:
            raise ParseError("invalid_integer", row=number, column=key) from exc

    def optional_real(self, key: str) -> Optional[float]:
        number, value = self.raw(key)
        if value.lower() == "none":
            return None
        try:
            return float(value)
        except ValueError as exc:
            raise ParseError("invalid_real", row=number, column=key) from exc

    def reals(self, key: str, count: int) -> List[float]:
        number, value = self.raw(key)
        tokens = value.split()
        if len(tokens) != count:
            raise ParseError("wrong_value_count", row=number, column=key)
        try:
            return [float(token) for token in tokens]
        except ValueError as exc:
            raise ParseError("invalid_real", row=number, column=key) from exc


def parse_model(text: str) -> StoredModel:
    reader = _Reader(_parse_entries(text))
    n_components = reader.integer("components")
    d = reader.integer("features")
    q = reader.integer("factors")
    if n_components < 1 or d < 1 or q < 1:
        raise ModelStoreError("invalid_dimensions")

    weights = reader.reals("weights", n_components)
    means = [reader.reals(f"mean.{g}", d) for g in range(1, n_components + 1)]
    loadings = [
        [reader.reals(f"loadings.{g}.{j}", q) for j in range(1, d + 1)] for g in range(1, n_components + 1)
    ]
    uniquenesses = [reader.reals(f"uniquenesses.{g}", d) for g in range(1, n_components + 1)]

    try:
        params = MgfaParams(weights=weights, means=means, loadings=loadings, uniquenesses=uniquenesses)
        lower = reader.optional_real("lower")
        upper = reader.optional_real("upper")
        bounds = None if lower is None else EigenBounds(lower=lower, upper=np.inf if upper is None else upper)
    except InvalidArgumentError as exc:
        raise ModelStoreError("invariant_violation", detail=exc.code) from exc

    metadata: Dict[str, Any] = {}
    if reader.has("metadata"):
        number, value = reader.raw("metadata")
        try:
            metadata = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ParseError("invalid_metadata", row=number, column="metadata") from exc
    return StoredModel(params=params, bounds=bounds, metadata=metadata)


def load_model(path: Union[str, Path]) -> StoredModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ParseError("file_not_found", column=str(path)) from exc
    return parse_model(text)


__all__ = [
    "FORMAT_VERSION",
    "ModelStoreError",
    "StoredModel",
    "load_model",
    "parse_model",
    "render_model",
    "save_model",
]
