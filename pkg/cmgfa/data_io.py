"""CSV ingestion, standardization and atomic file output."""
from __future__ import annotations

import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidArgumentError, ParseError
from .model_core import Dataset

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]
_LINE_PATTERN = re.compile(r"line (\d+)")


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` to a temporary sibling of ``path`` and rename it into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", newline="", dir=target.parent, prefix=f".{target.name}.", suffix=".tmp", delete=False
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, target)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise
    return target


def _looks_numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_table(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except FileNotFoundError as exc:
        raise ParseError("file_not_found", column=str(path)) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("missing_header", row=1) from exc
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        raise ParseError("ragged_row", row=int(match.group(1)) if match else None) from exc
    except UnicodeDecodeError as exc:
        raise ParseError("invalid_encoding") from exc

    if not isinstance(frame.index, pd.RangeIndex):
        # every data row has more fields than the header
        raise ParseError("ragged_row", row=2)
    if all(_looks_numeric(str(name)) for name in frame.columns):
        raise ParseError("missing_header", row=1)
    if frame.empty:
        raise ParseError("no_rows", row=2)
    missing = frame.isna()
    if missing.to_numpy().any():
        position = int(np.flatnonzero(missing.to_numpy().any(axis=1))[0])
        raise ParseError("ragged_row", row=position + 2)
    return frame


def _encode_labels(values: pd.Series, column: str) -> NDArray:
    cleaned = values.str.strip()
    blank = np.flatnonzero((cleaned == "").to_numpy())
    if blank.size:
        raise ParseError("missing_label", row=int(blank[0]) + 2, column=column)
    numeric = pd.to_numeric(cleaned, errors="coerce")
    # "2" and "2.0" name the same class
    keys = numeric if numeric.notna().all() else cleaned
    codes, _ = pd.factorize(keys, sort=False)
    return codes.astype(np.int64) + 1


def load_csv(path: PathLike, label_column: Optional[str] = None) -> Dataset:
    """Read a header-first numeric CSV; ``label_column`` becomes 1-based class labels.

    Labels, numeric or not, are numbered 1..G in order of first appearance.
    """
    path = Path(path)
    frame = _read_table(path)

    labels = None
    if label_column is not None:
        if label_column not in frame.columns:
            raise ParseError("unknown_label_column", column=label_column)
        labels = _encode_labels(frame[label_column], label_column)
        frame = frame.drop(columns=[label_column])
    if frame.shape[1] == 0:
        raise ParseError("no_feature_columns", row=1)

    columns = []
    for name in frame.columns:
        raw = frame[name].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            raise ParseError("non_numeric_cell", row=int(bad[0]) + 2, column=str(name))
        values = parsed.to_numpy(dtype=np.float64)
        infinite = np.flatnonzero(~np.isfinite(values))
        if infinite.size:
            raise ParseError("non_finite_cell", row=int(infinite[0]) + 2, column=str(name))
        columns.append(values)

    observations = np.column_stack(columns)
    LOGGER.info("Loaded %s: n=%d d=%d labels=%s", path, observations.shape[0], observations.shape[1], label_column)
    return Dataset(observations=observations, labels=labels, feature_names=tuple(str(name) for name in frame.columns))


def peek_columns(path: PathLike) -> Tuple[str, ...]:
    """Header names only; lets callers validate dimensions before a full load."""
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0, encoding="utf-8")
    except FileNotFoundError as exc:
        raise ParseError("file_not_found", column=str(path)) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("missing_header", row=1) from exc
    return tuple(str(name).strip() for name in header.columns)


def load_labels(path: PathLike, column: Optional[str] = None) -> NDArray:
    """Read initial hard labels from a CSV (first column unless ``column`` is named)."""
    frame = _read_table(Path(path))
    name = column or str(frame.columns[0])
    if name not in frame.columns:
        raise ParseError("unknown_label_column", column=name)
    return _encode_labels(frame[name], name)


def dataset_frame(dataset: Dataset, label_column: Optional[str] = "label") -> pd.DataFrame:
    frame = pd.DataFrame(dataset.observations, columns=list(dataset.column_names()))
    if dataset.labels is not None and label_column:
        if label_column in frame.columns:
            raise InvalidArgumentError("label_column_clashes_with_feature", detail=label_column)
        frame[label_column] = dataset.labels
    return frame


def write_csv(dataset: Dataset, path: PathLike, label_column: Optional[str] = "label") -> Path:
    """Write ``dataset`` as CSV with shortest round-trip float formatting."""
    text = dataset_frame(dataset, label_column).to_csv(index=False, lineterminator="\n")
    return atomic_write_text(path, text)


@dataclass(frozen=True)
class ScalingTransform:
    """Per-feature centre (mean) and scale (n-1 standard deviation)."""

    center: NDArray
    scale: NDArray

    def __post_init__(self) -> None:
        center = np.array(self.center, dtype=float)
        scale = np.array(self.scale, dtype=float)
        if center.shape != scale.shape or center.ndim != 1:
            raise InvalidArgumentError("scaling_shape_mismatch")
        if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
            raise InvalidArgumentError("non_positive_scale")
        center.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    def apply(self, observations: ArrayLike) -> NDArray:
        return (np.asarray(observations, dtype=float) - self.center) / self.scale

    def inverse(self, observations: ArrayLike) -> NDArray:
        return np.asarray(observations, dtype=float) * self.scale + self.center


def standardize(data: Dataset) -> Tuple[Dataset, ScalingTransform]:
    observations = data.observations
    if data.n_observations < 2:
        raise InvalidArgumentError("too_few_rows_to_scale")
    center = observations.mean(axis=0)
    scale = observations.std(axis=0, ddof=1)
    names = data.column_names()
    for j, value in enumerate(scale):
        if not value > 0:
            raise InvalidArgumentError("constant_column", detail=names[j])
    transform = ScalingTransform(center=center, scale=scale)
    scaled = Dataset(observations=transform.apply(observations), labels=data.labels, feature_names=data.feature_names)
    return scaled, transform


__all__ = [
    "ScalingTransform",
    "atomic_write_text",
    "dataset_frame",
    "load_csv",
    "load_labels",
    "peek_columns",
    "standardize",
    "write_csv",
]
