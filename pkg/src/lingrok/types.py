"""Shared domain types, the RNG contract and numeric conventions.

Every random draw in the package comes from ``seeded_rng``, a numpy
``Generator`` over the PCG64 bit generator.  PCG64 is a portable 64-bit
generator with jump-ahead support, so a given seed yields the same stream on
every platform numpy supports.

Numeric conventions
-------------------
* all math is float64;
* a score ``w.x + b`` strictly greater than zero predicts +1, anything else
  (including an exact zero) predicts -1;
* a training step whose ``eta * |grad|`` exceeds ``DIVERGENCE_LIMIT`` aborts
  with :class:`DivergenceError`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

DIVERGENCE_LIMIT = 1e6
LOSS_KINDS = ("logistic", "exponential")
DATASET_KINDS = ("standard", "concentrated", "planted")


class LingrokError(Exception):
    """Base class for package errors."""


class SpecError(LingrokError, ValueError):
    """Invalid or inconsistent specification; ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class InfeasibleSpecError(LingrokError):
    """A dataset spec whose rejection sampler cannot realistically succeed."""


class DivergenceError(LingrokError, FloatingPointError):
    """Training left the numerically safe region."""


class NumericError(LingrokError, ArithmeticError):
    """NaN/Inf or non-convergence inside a numeric routine."""


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream for ``seed`` (PCG64)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _as_pair(value, name: str) -> tuple[int, int]:
    try:
        a, b = value
    except (TypeError, ValueError):
        raise SpecError(f"{name} must be a pair of integers", name) from None
    if int(a) != a or int(b) != b:
        raise SpecError(f"{name} must hold integers", name)
    return int(a), int(b)


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a synthetic dataset; generation is a pure function of it."""

    kind: str
    gamma: float
    w_true: tuple[float, ...]
    class_counts: tuple[int, int]
    alpha_sens: float | None = None
    box_halfwidth: float = 5.0
    planted_support_counts: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise SpecError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}", "kind")
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma) and self.gamma > 0):
            raise SpecError("gamma must be a positive finite number", "gamma")
        w = tuple(float(v) for v in self.w_true)
        if len(w) == 0:
            raise SpecError("w_true must be non-empty", "w_true")
        if abs(math.sqrt(math.fsum(v * v for v in w)) - 1.0) > 1e-12:
            raise SpecError("w_true must have unit norm", "w_true")
        object.__setattr__(self, "w_true", w)
        object.__setattr__(self, "gamma", float(self.gamma))
        counts = _as_pair(self.class_counts, "class_counts")
        if min(counts) < 0:
            raise SpecError("class_counts must be nonnegative", "class_counts")
        object.__setattr__(self, "class_counts", counts)
        if self.planted_support_counts is not None:
            object.__setattr__(self, "planted_support_counts",
                               _as_pair(self.planted_support_counts, "planted_support_counts"))
        if self.alpha_sens is not None:
            object.__setattr__(self, "alpha_sens", float(self.alpha_sens))
        if self.kind == "concentrated":
            if self.alpha_sens is None:
                raise SpecError("concentrated datasets need alpha_sens", "alpha_sens")
            if not self.alpha_sens * self.gamma > self.gamma / 2:
                raise SpecError("alpha_sens*gamma must exceed gamma/2 (empty band)", "alpha_sens")
        if not (self.box_halfwidth > self.gamma / 2):
            raise SpecError("box_halfwidth must exceed gamma/2", "box_halfwidth")
        object.__setattr__(self, "box_halfwidth", float(self.box_halfwidth))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def dim(self) -> int:
        return len(self.w_true)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "w_true": list(self.w_true),
            "alpha_sens": self.alpha_sens,
            "box_halfwidth": self.box_halfwidth,
            "class_counts": list(self.class_counts),
            "planted_support_counts": (None if self.planted_support_counts is None
                                       else list(self.planted_support_counts)),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DatasetSpec":
        d = dict(d)
        for name in ("kind", "gamma", "w_true", "class_counts"):
            if name not in d:
                raise SpecError(f"missing required field {name!r}", name)
        w = d["w_true"]
        if isinstance(w, Mapping):
            # {"dim": d} shorthand for the diagonal direction (1,...,1)/sqrt(d)
            w = diagonal_direction(int(w["dim"]))
        allowed = {"kind", "gamma", "w_true", "alpha_sens", "box_halfwidth",
                   "class_counts", "planted_support_counts", "seed"}
        unknown = set(d) - allowed
        if unknown:
            name = sorted(unknown)[0]
            raise SpecError(f"unknown field {name!r}", name)
        return cls(
            kind=d["kind"],
            gamma=d["gamma"],
            w_true=tuple(w),
            class_counts=tuple(d["class_counts"]),
            alpha_sens=d.get("alpha_sens"),
            box_halfwidth=d.get("box_halfwidth", 5.0),
            planted_support_counts=(None if d.get("planted_support_counts") is None
                                    else tuple(d["planted_support_counts"])),
            seed=d.get("seed", 0),
        )

    def replace(self, **changes) -> "DatasetSpec":
        d = self.to_dict()
        d.update(changes)
        return DatasetSpec.from_dict(d)


def diagonal_direction(dim: int) -> tuple[float, ...]:
    """Unit vector (1,...,1)/sqrt(dim), normalized so its norm is 1 to 1e-15."""
    v = np.full(dim, 1.0 / math.sqrt(dim))
    v /= np.linalg.norm(v)
    return tuple(float(x) for x in v)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled points ``X`` (N x d) with labels ``y`` in {-1,+1}.

    ``radius_bound`` is computed at construction and always equals the largest
    point norm.  ``meta`` carries generator bookkeeping such as
    ``planted_indices``.
    """

    X: np.ndarray
    y: np.ndarray
    spec: DatasetSpec | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)
    radius_bound: float = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            if X.size == 0 and self.spec is not None:
                X = X.reshape(0, self.spec.dim)
            else:
                raise SpecError("X must be a 2-D array", "points")
        if y.shape != (X.shape[0],):
            raise SpecError("y must have one label per point", "points")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise SpecError("labels must be exactly -1 or +1", "points")
        if self.spec is not None and X.shape[1] != self.spec.dim:
            raise SpecError("point dimension differs from spec dimension", "points")
        if not np.all(np.isfinite(X)):
            raise SpecError("points must be finite", "points")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        R = float(np.sqrt((X * X).sum(axis=1)).max()) if len(X) else 0.0
        object.__setattr__(self, "radius_bound", R)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def points(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.y[i])) for i in range(len(self))]

    def to_csv(self, path: str | Path) -> None:
        """Write ``y,x_0,...`` rows plus a ``.json`` sidecar holding the spec."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y"] + [f"x_{j}" for j in range(self.dim)])
            for xi, yi in zip(self.X, self.y):
                wr.writerow([int(yi)] + [_fmt(v) for v in xi])
        sidecar = {"spec": None if self.spec is None else self.spec.to_dict(),
                   "meta": _jsonable(self.meta)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        side = json.loads(path.with_suffix(".json").read_text())
        spec = None if side["spec"] is None else DatasetSpec.from_dict(side["spec"])
        return cls(raw[:, 1:], raw[:, 0], spec=spec, meta=side.get("meta", {}))


@dataclass(frozen=True)
class LinearModel:
    """Linear classifier ``sign(w.x + b)``."""

    w: np.ndarray
    b: float = 0.0
    bias_learnable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(np.atleast_1d(self.w)))
        object.__setattr__(self, "b", float(self.b))
        if not self.bias_learnable and self.b != 0.0:
            raise SpecError("a model with a frozen bias must have b = 0", "b")

    @classmethod
    def zeros(cls, dim: int, bias_learnable: bool = True) -> "LinearModel":
        return cls(np.zeros(dim), 0.0, bias_learnable)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.w + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.scores(X) > 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class PgdConfig:
    """l_inf PGD attack parameters.  Clip bounds may be scalars or per-coordinate."""

    eps_adv: float = 1.0
    step: float = 0.25
    iters: int = 20
    random_start: bool = False
    clip_lo: Any = -5.0
    clip_hi: Any = 5.0
    seed: int = 0

    def __post_init__(self):
        if not self.eps_adv >= 0:
            raise SpecError("eps_adv must be >= 0", "eps_adv")
        if not self.step > 0:
            raise SpecError("step must be > 0", "step")
        if int(self.iters) != self.iters or self.iters < 1:
            raise SpecError("iters must be a positive integer", "iters")
        lo = np.asarray(self.clip_lo, dtype=float)
        hi = np.asarray(self.clip_hi, dtype=float)
        if np.any(lo > hi):
            raise SpecError("clip_lo must not exceed clip_hi", "clip_lo")

    @property
    def saturates(self) -> bool:
        """True when ``step * iters`` can reach the ball boundary."""
        return self.step * self.iters >= self.eps_adv

    def to_dict(self) -> dict[str, Any]:
        return _jsonable({"eps_adv": self.eps_adv, "step": self.step, "iters": self.iters,
                          "random_start": self.random_start, "clip_lo": self.clip_lo,
                          "clip_hi": self.clip_hi, "seed": self.seed})

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PgdConfig":
        allowed = {"eps_adv", "step", "iters", "random_start", "clip_lo", "clip_hi", "seed"}
        unknown = set(d) - allowed
        if unknown:
            name = sorted(unknown)[0]
            raise SpecError(f"unknown field {name!r}", name)
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Gradient descent settings.

    ``eval_sets`` maps a name to a Dataset; each becomes a ``Q_<name>`` trace
    column.  ``adversarial_set`` names the eval set attacked when
    ``adversarial_eval`` is given; its accuracy is logged as ``Q_adv``.
    ``reference_direction`` is the direction ``cos_align`` is measured
    against; None means the training spec's ``w_true``.
    """

    learning_rate: float = 0.01
    total_steps: int = 1000
    log_every: int = 100
    loss_kind: str = "logistic"
    bias_learnable: bool = True
    eval_sets: Mapping[str, Dataset] = field(default_factory=dict)
    adversarial_eval: PgdConfig | None = None
    adversarial_set: str | None = None
    reference_direction: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise SpecError("learning_rate must be positive", "learning_rate")
        if int(self.total_steps) != self.total_steps or self.total_steps < 0:
            raise SpecError("total_steps must be a nonnegative integer", "total_steps")
        if int(self.log_every) != self.log_every or self.log_every < 1:
            raise SpecError("log_every must be a positive integer", "log_every")
        if self.total_steps > 0 and self.log_every > self.total_steps:
            raise SpecError("log_every must not exceed total_steps", "log_every")
        if self.loss_kind not in LOSS_KINDS:
            raise SpecError(f"loss_kind must be one of {LOSS_KINDS}", "loss_kind")
        for name in self.eval_sets:
            if not name.replace("_", "").isalnum() or name == "adv":
                raise SpecError(f"bad eval set name {name!r}", "eval_sets")
        if self.adversarial_eval is not None:
            target = self.adversarial_set
            if target is None:
                if not self.eval_sets:
                    raise SpecError("adversarial_eval needs an eval set", "adversarial_set")
            elif target not in self.eval_sets:
                raise SpecError(f"adversarial_set {target!r} is not an eval set", "adversarial_set")

    @property
    def adversarial_target(self) -> str | None:
        if self.adversarial_eval is None:
            return None
        return self.adversarial_set or next(iter(self.eval_sets))

    def nr2_warning(self, ds: Dataset, threshold: float = 1e4) -> str | None:
        """Warning text when eta*N*R^2 is large enough to risk GD instability."""
        v = self.learning_rate * len(ds) * ds.radius_bound ** 2
        if v > threshold:
            return f"eta*N*R^2 = {v:.3g} exceeds {threshold:g}; discrete GD may oscillate"
        return None


TRACE_BASE_COLUMNS = ("t", "b", "norm_w", "cos_align", "rho_norm", "train_loss", "P")


class TrainTrace:
    """Logged time series of one training run (single writer, append-only)."""

    def __init__(self, q_names: Sequence[str], dim: int, store_w: bool = True):
        self.q_names = list(q_names)
        self.dim = int(dim)
        self.store_w = bool(store_w)
        self._rows: list[list[float]] = []
        self._w: list[np.ndarray] = []
        self.checkpoints: dict[int, np.ndarray] = {}
        self.meta: dict[str, Any] = {}

    # -- construction -----------------------------------------------------
    def append(self, t: int, b: float, norm_w: float, cos_align: float, train_loss: float,
               P: float, Q: Mapping[str, float], w: np.ndarray | None = None,
               rho_norm: float = math.nan) -> None:
        if self._rows and t <= self._rows[-1][0]:
            raise ValueError("trace steps must be strictly increasing")
        row = [float(t), float(b), float(norm_w), float(cos_align), float(rho_norm),
               float(train_loss), float(P)] + [float(Q[n]) for n in self.q_names]
        self._rows.append(row)
        if self.store_w:
            if w is None:
                raise ValueError("this trace stores w snapshots; w is required")
            self._w.append(np.array(w, dtype=np.float64))

    def header(self) -> list[str]:
        cols = list(TRACE_BASE_COLUMNS) + [f"Q_{n}" for n in self.q_names]
        if self.store_w:
            cols += [f"w_{j}" for j in range(self.dim)]
        return cols

    def row_strings(self, i: int) -> list[str]:
        row = self._rows[i]
        out = [str(int(row[0]))] + [_fmt(v) for v in row[1:]]
        if self.store_w:
            out += [_fmt(v) for v in self._w[i]]
        return out

    # -- accessors --------------------------------------------------------
    def __len__(self) -> int:
        return len(self._rows)

    def column(self, name: str) -> np.ndarray:
        if name.startswith("Q_"):
            idx = len(TRACE_BASE_COLUMNS) + self.q_names.index(name[2:])
        else:
            idx = TRACE_BASE_COLUMNS.index(name)
        return np.array([r[idx] for r in self._rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t").astype(np.int64)

    def Q(self, name: str) -> np.ndarray:
        return self.column(f"Q_{name}")

    @property
    def W(self) -> np.ndarray:
        """Stacked w snapshots (entries x d); raises if snapshots are absent."""
        if not self.store_w:
            raise LookupError("trace holds no per-entry w snapshots")
        return np.array(self._w).reshape(len(self._w), self.dim)

    def set_rho(self, values: np.ndarray) -> None:
        idx = TRACE_BASE_COLUMNS.index("rho_norm")
        for r, v in zip(self._rows, values):
            r[idx] = float(v)

    # -- persistence ------------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for i in range(len(self)):
                wr.writerow(self.row_strings(i))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace file")
        header = rows[0]
        nb = len(TRACE_BASE_COLUMNS)
        if tuple(header[:nb]) != TRACE_BASE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header")
        q_names = [h[2:] for h in header[nb:] if h.startswith("Q_")]
        w_cols = [h for h in header if h.startswith("w_")]
        tr = cls(q_names, dim=len(w_cols), store_w=bool(w_cols))
        nq = len(q_names)
        for r in rows[1:]:
            if len(r) != len(header):
                raise ValueError(f"{path}: ragged row at t={r[0] if r else '?'}")
            vals = [float(v) for v in r]
            w = np.array(vals[nb + nq:]) if w_cols else None
            tr.append(int(r[0]), vals[1], vals[2], vals[3], vals[5], vals[6],
                      dict(zip(q_names, vals[nb:nb + nq])), w=w, rho_norm=vals[4])
        return tr

    def equals(self, other: "TrainTrace") -> bool:
        if self.header() != other.header() or len(self) != len(other):
            return False
        for a, b in zip(self._rows, other._rows):
            if not all(x == y or (math.isnan(x) and math.isnan(y)) for x, y in zip(a, b)):
                return False
        return all(np.array_equal(a, b) for a, b in zip(self._w, other._w))


class TraceWriter:
    """Streams trace rows to CSV, flushing every ``flush_every`` rows."""

    def __init__(self, path: str | Path, trace: TrainTrace, flush_every: int = 1000):
        self.path = Path(path)
        self.trace = trace
        self.flush_every = flush_every
        self._fh = open(self.path, "w", newline="")
        self._wr = csv.writer(self._fh, lineterminator="\n")
        self._wr.writerow(trace.header())
        self._fh.flush()
        self._pending = 0

    def write_row(self, i: int) -> None:
        self._wr.writerow(self.trace.row_strings(i))
        self._pending += 1
        if self._pending >= self.flush_every:
            self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()


def _fmt(v: float) -> str:
    return "%.17g" % v


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
