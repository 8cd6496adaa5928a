"""Data model: validated datasets and the two design matrices built from them.

A :class:`Dataset` holds the response ``y`` (left-censored at zero), the
exogenous block ``x_exo`` whose first column is the constant, a single
endogenous regressor ``w`` and a single excluded instrument ``z1``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "Schema",
    "InstrumentDesign",
    "AugmentedDesign",
    "validate_dataset",
    "load_schema",
    "load_csv",
    "build_instrument_design",
    "build_augmented_design",
]

INTERCEPT = "const"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Schema:
    """Column roles for a raw table."""

    response: str
    exogenous: tuple[str, ...]
    endogenous: str
    instrument: str

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Schema":
        if not isinstance(m, Mapping):
            raise ConfigError("schema must be a JSON object")
        for key in ("response", "exogenous", "endogenous", "instrument"):
            if key not in m or m[key] in (None, "", []):
                raise ConfigError(f"schema is missing required field '{key}'")
        exo = m["exogenous"]
        if isinstance(exo, str):
            exo = [exo]
        if not exo:
            raise ConfigError("schema field 'exogenous' needs at least one column")
        for key in ("response", "endogenous", "instrument"):
            if not isinstance(m[key], str):
                raise ConfigError(
                    f"schema field '{key}' must name exactly one column"
                )
        return cls(m["response"], tuple(exo), m["endogenous"], m["instrument"])

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "exogenous": list(self.exogenous),
            "endogenous": self.endogenous,
            "instrument": self.instrument,
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated observations ``(y_i, x_i, w_i, z1_i)``.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Response, already shifted so the censoring point is zero.
    x_exo : ndarray, shape (n, p)
        Exogenous regressors; column 0 is identically one.
    w : ndarray, shape (n,)
        Endogenous regressor.
    z1 : ndarray, shape (n,)
        Excluded instrument.
    names : dict
        Column labels with keys ``response``, ``exogenous`` (tuple, starting
        with the intercept), ``endogenous`` and ``instrument``.
    """

    y: np.ndarray
    x_exo: np.ndarray
    w: np.ndarray
    z1: np.ndarray
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        y = _frozen(self.y)
        x = np.asarray(self.x_exo, dtype=float)
        x = _frozen(x.reshape(-1, 1) if x.ndim == 1 else x)
        w = _frozen(self.w)
        z1 = _frozen(self.z1)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_exo", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z1", z1)
        n = y.shape[0]
        for label, arr in (("x_exo", x), ("w", w), ("z1", z1)):
            if arr.shape[0] != n:
                raise DataError(
                    f"length mismatch: {label} has {arr.shape[0]} rows, y has {n}"
                )
        p = x.shape[1]
        if n < p + 3:
            raise DataError(f"need at least p + 3 = {p + 3} observations, got {n}")
        for label, arr in (("y", y), ("x_exo", x), ("w", w), ("z1", z1)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise DataError(f"non-finite value in {label} at row {row}")
        neg = np.flatnonzero(y < 0)
        if neg.size:
            raise DataError(f"negative response at row {int(neg[0])}")
        if not np.all(x[:, 0] == 1.0):
            raise DataError("column 0 of x_exo must be identically 1")
        names = dict(self.names)
        names.setdefault("response", "y")
        names.setdefault(
            "exogenous", (INTERCEPT,) + tuple(f"x{j}" for j in range(1, p))
        )
        names["exogenous"] = tuple(names["exogenous"])
        names.setdefault("endogenous", "w")
        names.setdefault("instrument", "z1")
        if len(names["exogenous"]) != p:
            raise DataError("exogenous names do not match the x_exo column count")
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x_exo.shape[1]

    @property
    def n_censored(self) -> int:
        return int(np.count_nonzero(self.y == 0))

    @property
    def param_names(self) -> tuple[str, ...]:
        """Labels of the second-stage coefficients, residual last."""
        return self.names["exogenous"] + (self.names["endogenous"], "residual")

    def take(self, idx) -> "Dataset":
        """Row subset (used by the bootstrap)."""
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.y[idx], self.x_exo[idx], self.w[idx], self.z1[idx],
                       self.names)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.y, self.x_exo, self.w, self.z1):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def columns(self) -> dict[str, np.ndarray]:
        cols = {self.names["response"]: self.y}
        for j, name in enumerate(self.names["exogenous"]):
            if j:
                cols[name] = self.x_exo[:, j]
        cols[self.names["endogenous"]] = self.w
        cols[self.names["instrument"]] = self.z1
        return cols

    def schema(self) -> Schema:
        return Schema(self.names["response"], self.names["exogenous"][1:],
                      self.names["endogenous"], self.names["instrument"])

    def to_csv(self, path) -> None:
        """Write a CSV that :func:`load_csv` reads back bit-exactly."""
        cols = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(cols))
            for i in range(self.n):
                writer.writerow([repr(float(c[i])) for c in cols.values()])

    def equals(self, other: "Dataset") -> bool:
        return (
            self.names == other.names
            and all(
                np.array_equal(a, b)
                for a, b in zip((self.y, self.x_exo, self.w, self.z1),
                                (other.y, other.x_exo, other.w, other.z1))
            )
        )


def _column(raw, name: str) -> np.ndarray:
    try:
        col = raw[name]
    except (KeyError, IndexError):
        raise DataError(f"missing column '{name}'") from None
    out = np.empty(len(col))
    for i, v in enumerate(col):
        try:
            out[i] = float(v)
        except (TypeError, ValueError):
            raise DataError(
                f"non-numeric value {v!r} in column '{name}' at row {i}"
            ) from None
        if not math.isfinite(out[i]):
            raise DataError(f"non-finite value in column '{name}' at row {i}")
    return out


def validate_dataset(raw: Mapping, schema: Schema | Mapping) -> Dataset:
    """Build a :class:`Dataset` from a column mapping and a role schema.

    ``raw`` is anything indexable by column name (a dict of sequences or a
    DataFrame). A constant column is prepended to the exogenous block unless
    one of the listed exogenous columns is already constant, in which case it
    is moved to the front.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    y = _column(raw, schema.response)
    w = _column(raw, schema.endogenous)
    z1 = _column(raw, schema.instrument)
    exo = [_column(raw, c) for c in schema.exogenous]
    lengths = {schema.response: len(y), schema.endogenous: len(w),
               schema.instrument: len(z1)}
    lengths.update({c: len(a) for c, a in zip(schema.exogenous, exo)})
    if len(set(lengths.values())) > 1:
        raise DataError(f"length mismatch between columns: {lengths}")
    neg = np.flatnonzero(y < 0)
    if neg.size:
        raise DataError(
            f"negative response at row {int(neg[0])} (column '{schema.response}')"
        )
    names = list(schema.exogenous)
    const = [j for j, a in enumerate(exo) if a.size and np.all(a == 1.0)]
    if const:
        j = const[0]
        exo.insert(0, exo.pop(j))
        names.insert(0, names.pop(j))
    else:
        exo.insert(0, np.ones_like(y))
        names.insert(0, INTERCEPT)
    x = np.column_stack(exo)
    return Dataset(y, x, w, z1, {
        "response": schema.response,
        "exogenous": tuple(names),
        "endogenous": schema.endogenous,
        "instrument": schema.instrument,
    })


def load_schema(path) -> Schema:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema {path} is not valid JSON: {exc}") from None
    return Schema.from_mapping(raw)


def load_csv(path, schema: Schema | Mapping) -> Dataset:
    """Read a UTF-8 CSV with a header row and validate it against ``schema``."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path} is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    header = [h.strip() for h in header]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(
                f"row {i} of {path} has {len(r)} fields, header has {len(header)}"
            )
    raw = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    return validate_dataset(raw, schema)


@dataclass(frozen=True, eq=False)
class InstrumentDesign:
    """First-stage regressor matrix ``Z = [z1 | x_exo]``."""

    Z: np.ndarray

    @property
    def n_cols(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True, eq=False)
class AugmentedDesign:
    """Second-stage design ``[x_exo | w | e]`` with the residual column last."""

    X_hat: np.ndarray
    residual_fingerprint: str = ""

    @property
    def n_cols(self) -> int:
        return self.X_hat.shape[1]


def build_instrument_design(d: Dataset) -> InstrumentDesign:
    return InstrumentDesign(_frozen(np.column_stack([d.z1, d.x_exo])))


def _fingerprint(e: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(e, dtype=float).tobytes()).hexdigest()[:16]


def build_augmented_design(d: Dataset, e: Sequence[float]) -> AugmentedDesign:
    e = np.asarray(e, dtype=float)
    if e.shape != (d.n,):
        raise DataError(f"length mismatch: residuals have shape {e.shape}, n = {d.n}")
    return AugmentedDesign(_frozen(np.column_stack([d.x_exo, d.w, e])), _fingerprint(e))
