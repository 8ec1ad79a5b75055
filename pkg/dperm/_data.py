"""Dataset ingestion and synthetic instances.

LIBSVM and CSV files are parsed line by line so errors can name the
offending line. Multi-class labels are binarized one-vs-rest (class 2 is
positive by default, which balances Covertype). Feature rows are
normalized to unit l2 norm unless the source says otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from dperm._exceptions import DataFormatError, InvalidInputError
from dperm._logging import logger
from dperm._objective import Dataset

DEFAULT_POSITIVE_CLASS = 2.0


class SourceKind(str, Enum):
    LIBSVM_FILE = "libsvm_file"
    CSV_FILE = "csv_file"
    SYNTHETIC_LOGISTIC = "synthetic_logistic"
    SYNTHETIC_QUADRATIC = "synthetic_quadratic"


class NormalizationKind(str, Enum):
    ROW_L2_UNIT = "row_l2_unit"
    MINMAX_THEN_ROW_L2 = "minmax_then_row_l2"
    NONE = "none"


@dataclass(frozen=True)
class DatasetSource:
    """Where a dataset comes from and how it is prepared.

    Build one with the classmethods, or from a command-line string with
    parse(). positive_class=None binarizes automatically: labels already in
    {-1, +1} or {0, 1} are mapped to +-1, anything else is one-vs-rest
    against class 2.

    Example:
        src = DatasetSource.parse("synth:logistic:n=2000,p=10,seed=3")
        data = load_dataset(src)
    """

    kind: SourceKind
    path: Path | None = None
    label_column: int | str = -1
    n_features: int | None = None
    n: int = 0
    p: int = 0
    mu: float = 0.0
    L: float = 0.0
    seed: int = 0
    normalization: NormalizationKind = NormalizationKind.ROW_L2_UNIT
    positive_class: float | None = None
    binarize: bool = True
    max_rows: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SourceKind(self.kind))
        object.__setattr__(self, "normalization", NormalizationKind(self.normalization))
        if self.kind in (SourceKind.LIBSVM_FILE, SourceKind.CSV_FILE):
            if self.path is None:
                raise InvalidInputError(f"{self.kind.value} needs a path")
            object.__setattr__(self, "path", Path(self.path))
        if self.max_rows is not None and self.max_rows < 1:
            raise InvalidInputError(f"max_rows must be >= 1, got {self.max_rows}")

    @classmethod
    def libsvm_file(cls, path: Path | str, *, n_features: int | None = None) -> DatasetSource:
        return cls(SourceKind.LIBSVM_FILE, Path(path), n_features=n_features)

    @classmethod
    def csv_file(cls, path: Path | str, label_column: int | str = -1) -> DatasetSource:
        return cls(SourceKind.CSV_FILE, Path(path), label_column=label_column)

    @classmethod
    def synthetic_logistic(cls, n: int, p: int, seed: int = 0) -> DatasetSource:
        return cls(SourceKind.SYNTHETIC_LOGISTIC, n=n, p=p, seed=seed)

    @classmethod
    def synthetic_quadratic(cls, n: int, p: int, mu: float, L: float, seed: int = 0) -> DatasetSource:
        """Least-squares instance; rows are left unnormalized so the spectrum stays [mu, L]."""
        return cls(
            SourceKind.SYNTHETIC_QUADRATIC,
            n=n,
            p=p,
            mu=mu,
            L=L,
            seed=seed,
            normalization=NormalizationKind.NONE,
            binarize=False,
        )

    @classmethod
    def parse(cls, text: str) -> DatasetSource:
        """Parse "synth:logistic:n=..,p=..,seed=..", "synth:quadratic:n=..,p=..,mu=..,L=..,seed=.." or a path."""
        if not text.startswith("synth:"):
            path = Path(text)
            if path.suffix.lower() == ".csv":
                return cls.csv_file(path)
            return cls.libsvm_file(path)
        _, _, rest = text.partition(":")
        name, _, params = rest.partition(":")
        values: dict[str, str] = {}
        for item in filter(None, params.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise InvalidInputError(f"expected key=value in {text!r}, got {item!r}")
            values[key.strip()] = value.strip()
        try:
            n, p = int(values.pop("n")), int(values.pop("p"))
            seed = int(values.pop("seed", "0"))
            if name == "logistic":
                source = cls.synthetic_logistic(n, p, seed)
            elif name == "quadratic":
                source = cls.synthetic_quadratic(n, p, float(values.pop("mu")), float(values.pop("L")), seed)
            else:
                raise InvalidInputError(f"unknown synthetic dataset {name!r}; use logistic or quadratic")
        except KeyError as e:
            raise InvalidInputError(f"{text!r} is missing {e.args[0]}") from None
        except ValueError as e:
            if isinstance(e, InvalidInputError):
                raise
            raise InvalidInputError(f"bad number in {text!r}: {e}") from None
        if values:
            raise InvalidInputError(f"unknown keys in {text!r}: {', '.join(sorted(values))}")
        return source

    def with_options(self, **changes: Any) -> DatasetSource:
        return replace(self, **changes)


# =============================================================================
# FILE FORMATS
# =============================================================================


def _parse_libsvm(path: Path, n_features: int | None) -> tuple[np.ndarray, np.ndarray]:
    labels: list[float] = []
    rows: list[dict[int, float]] = []
    max_index = 0
    with path.open(encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise DataFormatError(f"bad label {tokens[0]!r}", path=path, line_number=line_number) from None
            entries: dict[int, float] = {}
            for token in tokens[1:]:
                key, sep, value = token.partition(":")
                if not sep:
                    raise DataFormatError(f"expected index:value, got {token!r}", path=path, line_number=line_number)
                if key == "qid":
                    continue
                try:
                    index, number = int(key), float(value)
                except ValueError:
                    raise DataFormatError(f"bad pair {token!r}", path=path, line_number=line_number) from None
                if index < 1:
                    raise DataFormatError(f"indices are 1-based, got {index}", path=path, line_number=line_number)
                if n_features is not None and index > n_features:
                    raise DataFormatError(
                        f"index {index} exceeds {n_features} features", path=path, line_number=line_number
                    )
                entries[index - 1] = number
                max_index = max(max_index, index)
            labels.append(label)
            rows.append(entries)
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset")
    p = n_features if n_features is not None else max_index
    if p < 1:
        raise InvalidInputError(f"{path}: no features")
    features = np.zeros((len(rows), p))
    for r, entries in enumerate(rows):
        for j, value in entries.items():
            features[r, j] = value
    return features, np.array(labels)


def _is_numeric_row(row: list[str]) -> bool:
    try:
        [float(cell) for cell in row]
    except ValueError:
        return False
    return True


def _parse_csv(path: Path, label_column: int | str) -> tuple[np.ndarray, np.ndarray]:
    with path.open(encoding="utf-8", newline="") as handle:
        rows = [(number, row) for number, row in enumerate(csv.reader(handle), start=1) if row]
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset")
    header: list[str] | None = None
    if not _is_numeric_row(rows[0][1]):
        header = [cell.strip() for cell in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset")
    width = len(rows[0][1])
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise InvalidInputError(f"{path}: no column named {label_column!r}")
        column = header.index(label_column)
    else:
        column = label_column % width
    if width < 2:
        raise InvalidInputError(f"{path}: need a label column and at least one feature")

    values = np.empty((len(rows), width))
    for r, (line_number, row) in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"expected {width} fields, got {len(row)}", path=path, line_number=line_number)
        try:
            values[r] = [float(cell) for cell in row]
        except ValueError:
            raise DataFormatError("non-numeric field", path=path, line_number=line_number) from None
    labels = values[:, column]
    features = np.delete(values, column, axis=1)
    return features, labels


# =============================================================================
# PREPARATION
# =============================================================================


def binarize_labels(labels: np.ndarray, positive_class: float | None = None) -> np.ndarray:
    """Map labels to +-1. An explicit positive_class always means one-vs-rest."""
    labels = np.asarray(labels, dtype=np.float64)
    if positive_class is None:
        distinct = set(np.unique(labels).tolist())
        if distinct <= {-1.0, 1.0}:
            return labels.copy()
        if distinct <= {0.0, 1.0}:
            return np.where(labels > 0, 1.0, -1.0)
        positive_class = DEFAULT_POSITIVE_CLASS
    return np.where(labels == positive_class, 1.0, -1.0)


def normalize_rows(features: np.ndarray, kind: NormalizationKind | str) -> np.ndarray:
    """Apply a normalization; zero rows stay zero."""
    kind = NormalizationKind(kind)
    features = np.asarray(features, dtype=np.float64)
    if kind is NormalizationKind.NONE:
        return features.copy()
    if kind is NormalizationKind.MINMAX_THEN_ROW_L2:
        low = features.min(axis=0)
        span = features.max(axis=0) - low
        scaled = np.divide(features - low, span, out=np.zeros_like(features), where=span > 0)
        features = scaled
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return np.divide(features, norms, out=np.zeros_like(features), where=norms > 0)


def load_dataset(src: DatasetSource) -> Dataset:
    """Load, subsample, binarize and normalize the dataset a source describes."""
    if src.kind is SourceKind.SYNTHETIC_LOGISTIC:
        data = synth_logistic(src.n, src.p, src.seed)
        features, labels = data.features, data.labels
    elif src.kind is SourceKind.SYNTHETIC_QUADRATIC:
        data = synth_quadratic(src.n, src.p, src.mu, src.L, src.seed)
        features, labels = data.features, data.labels
    else:
        assert src.path is not None
        if not src.path.is_file():
            raise InvalidInputError(f"dataset file not found: {src.path}")
        if src.kind is SourceKind.LIBSVM_FILE:
            features, labels = _parse_libsvm(src.path, src.n_features)
        else:
            features, labels = _parse_csv(src.path, src.label_column)
        if src.binarize:
            labels = binarize_labels(labels, src.positive_class)

    if src.max_rows is not None and features.shape[0] > src.max_rows:
        keep = np.sort(np.random.default_rng(src.seed).choice(features.shape[0], src.max_rows, replace=False))
        features, labels = features[keep], labels[keep]
    features = normalize_rows(features, src.normalization)
    dataset = Dataset(features, labels)
    logger.info("loaded %s: n=%d, p=%d", src.path or src.kind.value, dataset.n, dataset.p)
    return dataset


# =============================================================================
# SYNTHETIC INSTANCES
# =============================================================================


def _check_size(n: int, p: int) -> None:
    if n < 2:
        raise InvalidInputError(f"n must be >= 2, got {n}")
    if p < 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")


def _unit_rows(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    draws = rng.standard_normal((n, p))
    return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def synth_logistic(n: int, p: int, seed: int) -> Dataset:
    """Unit-sphere features, a unit-sphere ground truth w, and P(b = +1 | a) = 1 / (1 + exp(-<w, a>))."""
    _check_size(n, p)
    rng = np.random.default_rng(seed)
    truth = _unit_rows(rng, 1, p)[0]
    features = _unit_rows(rng, n, p)
    probability = 1.0 / (1.0 + np.exp(-(features @ truth)))
    labels = np.where(rng.random(n) < probability, 1.0, -1.0)
    return Dataset(features, labels)


def synth_quadratic(n: int, p: int, mu: float, L: float, seed: int) -> Dataset:
    """Least-squares data whose averaged Hessian A^T A / n has spectrum linear on [mu, L].

    A = sqrt(n) Q diag(sqrt(s)) V^T with Q (n x p) orthonormal and V orthogonal,
    both from QR factorizations of Gaussian matrices.
    """
    _check_size(n, p)
    if n < p:
        raise InvalidInputError(f"need n >= p for an orthogonal design, got n={n}, p={p}")
    if not 0 < mu <= L:
        raise InvalidInputError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if p == 1 and not math.isclose(mu, L):
        raise InvalidInputError("a one-dimensional instance has a single eigenvalue; set mu = L")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    spectrum = np.linspace(mu, L, p)
    features = math.sqrt(n) * (Q * np.sqrt(spectrum)) @ V.T
    truth = rng.standard_normal(p) / math.sqrt(p)
    labels = features @ truth + 0.1 * rng.standard_normal(n)
    return Dataset(features, labels)
