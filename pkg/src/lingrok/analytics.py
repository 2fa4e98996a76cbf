"""Closed-form predictions and detectors for the bias-driven grokking picture.

Time conventions
----------------
``t`` is always the gradient-descent step index.  The bias law
``db/dt = (A+ e^{-b} - A- e^{b}) / t`` is written for unit step size; a GD
run with learning rate ``eta`` follows it with ``A+`` and ``A-`` multiplied
by ``eta`` (``delta`` and ``b_inf`` are unchanged).  Use
:meth:`AnalyticContext.in_steps` before comparing against a trace.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .maxmargin import SvmSolution
from .types import Dataset, LingrokError, TrainTrace


class DegenerateSeriesError(LingrokError, ValueError):
    """A series whose supremum is zero has no grokking time."""


class ResolutionError(LingrokError, ArithmeticError):
    """An ODE substep moved the state by more than the allowed amount."""


# ---------------------------------------------------------------------------
# reports and context

@dataclass(frozen=True)
class GrokReport:
    eps: float
    T_tr: int | None
    T_te: int | None
    zeta: float | None
    T_gr: int | None
    verdict: bool
    zeta_threshold: float
    sup_P: float
    sup_Q: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhaseReport:
    t0: int | None
    b0: float | None
    phase2_end: int | None = None
    phase3_span: tuple[int, int] | None = None
    method_notes: str = ""
    degenerate: bool = False
    phase3_monotone: bool | None = None
    extremum_ratio: float | None = None
    nonsupport_share_at_t0: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase3_span"] = None if self.phase3_span is None else list(self.phase3_span)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseReport":
        d = dict(d)
        if d.get("phase3_span") is not None:
            d["phase3_span"] = tuple(d["phase3_span"])
        return cls(**d)


@dataclass(frozen=True)
class AnalyticContext:
    """Scalars feeding the closed forms.  ``B`` is the empirical residual bound."""

    A_plus: float
    A_minus: float
    delta: float = field(default=None)
    b_inf: float = field(default=None)
    gamma: float = 1e-3
    alpha_sens: float = 10.0
    B: float = 1.0
    eta: float = 0.01
    N: int = 2000
    R: float = 1.0

    def __post_init__(self):
        if not (self.A_plus > 0 and self.A_minus > 0):
            raise ValueError("A_plus and A_minus must be positive")
        delta = math.sqrt(self.A_minus / self.A_plus)
        if self.delta is None:
            object.__setattr__(self, "delta", delta)
        elif abs(self.delta - delta) > 1e-12 * delta:
            raise ValueError("delta inconsistent with A_plus, A_minus")
        if self.b_inf is None:
            object.__setattr__(self, "b_inf", -math.log(self.delta))

    @classmethod
    def from_solution(cls, sol: SvmSolution, gamma: float, alpha_sens: float | None,
                      B: float, eta: float, N: int, R: float) -> "AnalyticContext":
        return cls(A_plus=sol.A_plus, A_minus=sol.A_minus, delta=sol.delta, b_inf=sol.b_inf,
                   gamma=gamma, alpha_sens=alpha_sens if alpha_sens is not None else 1.0,
                   B=B, eta=eta, N=N, R=R)

    def in_steps(self) -> "AnalyticContext":
        """Context whose bias law runs in GD step units (``A`` scaled by ``eta``)."""
        return replace(self, A_plus=self.A_plus * self.eta, A_minus=self.A_minus * self.eta,
                       delta=self.delta, b_inf=self.b_inf)


# ---------------------------------------------------------------------------
# grokking times

def _first_reach(values: np.ndarray, level: float) -> int | None:
    hit = np.flatnonzero(values >= level)
    return int(hit[0]) if len(hit) else None


def grok_times(t, P_series, Q_series, eps: float, zeta_threshold: float = 100.0) -> GrokReport:
    """Earliest logged steps at which P and Q reach ``(1 - eps)`` of their suprema.

    ``zeta = T_te / T_tr`` with ``T_tr`` floored at the first positive logged
    step, so a series that starts saturated does not divide by zero.
    """
    t = np.asarray(t, dtype=np.int64)
    P = np.asarray(P_series, dtype=float)
    Q = np.asarray(Q_series, dtype=float)
    if len(t) == 0 or len(P) != len(t) or len(Q) != len(t):
        raise ValueError("series must be nonempty and aligned on the logged steps")
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    supP, supQ = float(P.max()), float(Q.max())
    if supP <= 0 or supQ <= 0:
        raise DegenerateSeriesError("supremum is zero")
    iP = _first_reach(P, (1 - eps) * supP)
    iQ = _first_reach(Q, (1 - eps) * supQ)
    T_tr, T_te = int(t[iP]), int(t[iQ])
    positive = t[t > 0]
    floor = int(positive[0]) if len(positive) else 1
    zeta = max(T_te, floor) / max(T_tr, floor)
    return GrokReport(eps=float(eps), T_tr=T_tr, T_te=T_te, zeta=float(zeta), T_gr=T_te - T_tr,
                      verdict=bool(zeta >= zeta_threshold), zeta_threshold=float(zeta_threshold),
                      sup_P=supP, sup_Q=supQ)


def first_crossing(t, series, eps: float) -> int | None:
    """Earliest logged step with ``series >= (1 - eps) * sup``."""
    s = np.asarray(series, dtype=float)
    if s.max() <= 0:
        raise DegenerateSeriesError("supremum is zero")
    i = _first_reach(s, (1 - eps) * s.max())
    return int(np.asarray(t)[i])


# ---------------------------------------------------------------------------
# bias trajectory

def _g(ctx: AnalyticContext, t0, t):
    return 2.0 * math.sqrt(ctx.A_plus * ctx.A_minus) * np.log(np.asarray(t, dtype=float) / t0)


def bias_closed_form(ctx: AnalyticContext, b0: float, t0: float, t):
    """Integrated bias law from ``b(t0) = b0``.

    Evaluated as ``b = -log(delta) + log1p(-k e^{-g}) - log1p(k e^{-g})`` with
    ``k = (1 - delta e^{b0}) / (1 + delta e^{b0})``, which equals the ratio
    form algebraically and never overflows.  Accepts scalar or array ``t``.
    """
    if np.any(np.asarray(t) < t0) or t0 < 1:
        raise ValueError("need t >= t0 >= 1")
    if not ctx.delta > 0:
        raise ValueError("delta must be positive")
    q = ctx.delta * math.exp(b0)
    if not 1 + q > 0:
        raise ValueError(f"domain error: 1 + delta*e^b0 = {1 + q}")
    kappa = (1.0 - q) / (1.0 + q)
    x = kappa * np.exp(-_g(ctx, t0, t))
    out = -math.log(ctx.delta) + np.log1p(-x) - np.log1p(x)
    if np.any(~np.isfinite(out)):
        raise ValueError(f"domain error in closed form (delta={ctx.delta}, b0={b0})")
    return float(out) if np.ndim(out) == 0 else out


def bias_ode_oracle(ctx: AnalyticContext, b0: float, t0: float, t, substeps: int = 100_000):
    """RK4 integration of the bias law in ``s = log t`` with uniform steps.

    ``substeps`` covers ``[log t0, log max(t)]``; intermediate targets are
    reached exactly by splitting the range proportionally.
    """
    if substeps < 1000:
        raise ValueError("substeps must be >= 1000")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < t0) or t0 < 1:
        raise ValueError("need t >= t0 >= 1")
    Ap, Am = float(ctx.A_plus), float(ctx.A_minus)
    exp = math.exp

    def f(b):
        return Ap * exp(-b) - Am * exp(b)

    s0 = math.log(t0)
    span = math.log(ts.max()) - s0
    order = np.argsort(ts)
    out = np.empty(len(ts))
    b, s = float(b0), s0
    for k in order:
        seg = math.log(ts[k]) - s
        n = max(1, math.ceil(substeps * seg / span)) if span > 0 else 0
        if n:
            h = seg / n
            for _ in range(n):
                try:
                    k1 = f(b)
                    k2 = f(b + 0.5 * h * k1)
                    k3 = f(b + 0.5 * h * k2)
                    k4 = f(b + h * k3)
                except OverflowError:
                    raise ResolutionError("RK4 stage overflowed; raise substeps") from None
                db = h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
                if not abs(db) <= 1.0:
                    raise ResolutionError(f"substep change {db:.3g} exceeds 1; raise substeps")
                b += db
            s = math.log(ts[k])
        out[k] = b
    return float(out[0]) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# concentrated accuracy and bounds

def predicted_concentrated_accuracy(b: float, norm_w: float, gamma: float, alpha_sens: float,
                                    with_flag: bool = False):
    """Accuracy on the band ``gamma/2 <= |w_true.x| <= alpha*gamma`` of a model
    aligned with ``w_true`` whose hyperplane is offset by ``|b|/|w|``.

    Inside the band the value lies in [0.5, 1]; outside it is clamped to
    [0, 1] and, with ``with_flag``, reported as an extrapolation.
    """
    if not norm_w > 0:
        raise ValueError("norm_w must be positive")
    lo, hi = gamma / 2, alpha_sens * gamma
    if not hi > lo:
        raise ValueError("alpha_sens*gamma must exceed gamma/2")
    r = abs(b) / norm_w
    q = 1.0 - (r - lo) / (2.0 * (hi - lo))
    inside = lo <= r <= hi
    q = min(1.0, max(0.5, q)) if inside else min(1.0, max(0.0, q))
    return (q, not inside) if with_flag else q


def grok_time_bounds(ctx: AnalyticContext, eps: float) -> tuple[float, float]:
    """``exp(-+gamma B/2 + |log delta| / (1 + 2 eps (2 alpha - 1)))`` in ``t/t0`` units."""
    core = abs(math.log(ctx.delta)) / (1.0 + 2.0 * eps * (2.0 * ctx.alpha_sens - 1.0))
    half = ctx.gamma * ctx.B / 2.0
    return math.exp(-half + core), math.exp(half + core)


def rotation_bound_step(t: float, norm_w: float, ctx: AnalyticContext) -> float:
    """Per-step bound on the change of the no-bias hyperplane's cosine to its limit
    (leading two terms; the remainder is not included)."""
    if t < 2 or not norm_w > 0:
        raise ValueError("need t >= 2 and norm_w > 0")
    lt = math.log(t)
    pre = ctx.eta * ctx.N * ctx.R * math.exp(ctx.B * ctx.R)
    return (pre * ctx.B * ctx.gamma / (2 * t * lt * norm_w)
            + 3 * pre * ctx.B ** 2 * ctx.gamma ** 2 / (8 * t * lt ** 2 * norm_w))


# ---------------------------------------------------------------------------
# phases

def _snapshots(trace: TrainTrace):
    t = trace.t
    if trace.store_w:
        return t, trace.W, trace.column("b")
    keep = [i for i, ti in enumerate(t) if int(ti) in trace.checkpoints]
    W = np.array([trace.checkpoints[int(t[i])] for i in keep])
    return t[keep], W, trace.column("b")[keep]


def nonsupport_share(trace: TrainTrace, sol: SvmSolution, ds: Dataset,
                     loss_kind: str = "logistic"):
    """Per logged step, the non-support share of ``sum_i |l'(m_i)| |x_i|``."""
    t, W, b = _snapshots(trace)
    xn = np.linalg.norm(ds.X, axis=1)
    sv = np.zeros(len(ds), dtype=bool)
    sv[list(sol.support_indices)] = True
    share = np.empty(len(t))
    for lo in range(0, len(t), 256):
        hi = min(len(t), lo + 256)
        M = ds.y[None, :] * (W[lo:hi] @ ds.X.T + b[lo:hi, None])
        D = expit(-M) if loss_kind == "logistic" else np.exp(-np.maximum(M, -700.0))
        C = D * xn[None, :]
        tot = C.sum(axis=1)
        share[lo:hi] = np.where(tot > 0, C[:, ~sv].sum(axis=1) / np.where(tot > 0, tot, 1), 0.0)
    return t, share


def detect_t0(trace: TrainTrace, sol: SvmSolution, ds: Dataset, frac_tol: float = 0.01,
              loss_kind: str = "logistic") -> PhaseReport:
    """Earliest logged step where non-support points carry less than ``frac_tol``
    of the total gradient magnitude; ``t0`` is None when that never happens."""
    t, share = nonsupport_share(trace, sol, ds, loss_kind)
    hit = np.flatnonzero(share < frac_tol)
    if len(hit) == 0:
        return PhaseReport(t0=None, b0=None, method_notes=(
            f"non-support share never below frac_tol={frac_tol:g} "
            f"(minimum {share.min():.4g} at t={int(t[np.argmin(share)])})"))
    i = int(hit[0])
    b_all = trace.column("b")
    t0 = int(t[i])
    b0 = float(b_all[np.flatnonzero(trace.t == t0)[0]])
    return PhaseReport(t0=t0, b0=b0, nonsupport_share_at_t0=float(share[i]),
                       method_notes=f"t0 from frac_tol={frac_tol:g}")


def phase_segmentation(trace: TrainTrace, t0: int, noise_tol: float = 0.05,
                       base: PhaseReport | None = None) -> PhaseReport:
    """Split ``t >= t0`` at the extremum of ``|b|/|w|`` (end of unlearning).

    Phase 3 runs from that extremum to the last logged step; its decrease is
    checked against the running minimum with a ``noise_tol`` relative slack.
    """
    if t0 is None:
        raise ValueError("phase segmentation needs t0")
    t = trace.t
    b = trace.column("b")
    nw = trace.column("norm_w")
    sel = t >= t0
    ts, r = t[sel], np.abs(b[sel]) / np.where(nw[sel] > 0, nw[sel], np.inf)
    b0 = float(b[sel][0]) if base is None or base.b0 is None else base.b0
    common = dict(t0=int(t0), b0=b0,
                  nonsupport_share_at_t0=None if base is None else base.nonsupport_share_at_t0)
    notes = "" if base is None else base.method_notes
    if len(ts) == 0 or r.max() <= 1e-12:
        return PhaseReport(phase2_end=int(t0), phase3_span=None, degenerate=True,
                           method_notes=(notes + "; no bias swing").strip("; "), **common)
    k = int(np.argmax(r))
    if k == len(ts) - 1 and len(ts) > 1:
        return PhaseReport(phase2_end=int(ts[k]), phase3_span=None, extremum_ratio=float(r[k]),
                           method_notes=(notes + "; |b|/|w| still rising at the end: "
                                         "single-phase report").strip("; "), **common)
    tail = r[k:]
    running_min = np.minimum.accumulate(tail)
    monotone = bool(np.all(tail <= running_min * (1 + noise_tol) + 1e-15))
    return PhaseReport(phase2_end=int(ts[k]), phase3_span=(int(ts[k]), int(ts[-1])),
                       phase3_monotone=monotone, extremum_ratio=float(r[k]),
                       method_notes=notes, **common)


def delayed_robustness_check(trace: TrainTrace, phases: PhaseReport, eps: float = 0.05,
                             decade: float = 10.0) -> dict:
    """Whether adversarial grokking time lies within a factor ``decade`` of phase-3 start."""
    if "adv" not in trace.q_names:
        raise LookupError("trace has no adversarial accuracy series")
    t = trace.t
    T_adv = first_crossing(t, trace.Q("adv"), eps)
    start = None if phases.phase3_span is None else phases.phase3_span[0]
    out = {"eps": eps, "T_te_adv": T_adv, "phase3_start": start, "coincident": False}
    if start is None:
        out["reason"] = "no phase-3 start detected"
        return out
    positive = t[t > 0]
    floor = int(positive[0]) if len(positive) else 1
    ratio = max(T_adv, floor) / max(start, floor)
    out["ratio"] = ratio
    out["coincident"] = bool(1.0 / decade <= ratio <= decade)
    return out


def summary_row(kind: str, d: int, N: int, gamma: float, alpha_sens, delta, report: GrokReport,
                b_inf_pred, b_inf_meas) -> dict:
    """One row of the experiment summary table."""
    return {"kind": kind, "d": d, "N": N, "gamma": gamma, "alpha_sens": alpha_sens,
            "delta": delta, "T_tr": report.T_tr, "T_te": report.T_te, "zeta": report.zeta,
            "verdict": report.verdict, "b_inf_pred": b_inf_pred, "b_inf_meas": b_inf_meas}


SUMMARY_COLUMNS = ("run_id", "kind", "d", "N", "gamma", "alpha_sens", "delta", "T_tr", "T_te",
                   "zeta", "verdict", "b_inf_pred", "b_inf_meas", "status")
