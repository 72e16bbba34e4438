"""Per-step traces, run outcome labels and online checks of the descent and
zero-training-error properties of the wrong/correct split.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .model import Classifier, ParamVector
from .optim import BatchPartition

COS_EPS = 1e-12
TRACE_COLUMNS = ("t", "norm_G", "norm_GW", "norm_GC", "cos_WC", "L", "L_W", "L_C", "gamma_t", "frac_correct")


@dataclass(frozen=True)
class IterRecord:
    t: int
    norm_G: float
    norm_GW: float
    norm_GC: float
    cos_WC: float | None  # None when either group gradient is ~0
    L: float
    L_W: float
    L_C: float
    gamma_t: float
    frac_correct: float

    def row(self) -> list[str]:
        vals = [str(self.t)]
        for name in TRACE_COLUMNS[1:]:
            v = getattr(self, name)
            vals.append("" if v is None else repr(float(v)))
        return vals


def record_iteration(part: BatchPartition, losses: tuple[float, float, float], gamma_t: float,
                     t: int) -> IterRecord:
    nW = float(np.linalg.norm(part.G_W))
    nC = float(np.linalg.norm(part.G_C))
    cos = None
    if nW > COS_EPS and nC > COS_EPS:
        cos = float(np.clip(part.G_W @ part.G_C / (nW * nC), -1.0, 1.0))
    L, L_W, L_C = losses
    return IterRecord(
        t=t,
        norm_G=float(np.linalg.norm(part.total)),
        norm_GW=nW,
        norm_GC=nC,
        cos_WC=cos,
        L=L,
        L_W=L_W,
        L_C=L_C,
        gamma_t=float(gamma_t),
        frac_correct=len(part.correct_idx) / part.size,
    )


def write_trace(records: Sequence[IterRecord], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in records:
        w.writerow(r.row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_trace(path: str | Path) -> list[IterRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns {header}")
        out = []
        for row in reader:
            vals = dict(zip(header, row))
            out.append(IterRecord(
                t=int(vals["t"]),
                cos_WC=float(vals["cos_WC"]) if vals["cos_WC"] else None,
                **{k: float(vals[k]) for k in TRACE_COLUMNS[1:] if k not in ("cos_WC",)},
            ))
        return out


# -- run outcomes ---------------------------------------------------------

@dataclass(frozen=True)
class OutcomeThresholds:
    """``prior`` is the majority-class frequency of the evaluation labels."""

    prior: float = 0.5
    margin: float = 0.02


@dataclass(frozen=True)
class RunOutcome:
    label: str  # success | degenerate | collapsed
    final_val_acc: float
    prediction_entropy: float
    majority_pred_frac: float


def classify_outcome(val_predictions, val_acc: float,
                     thresholds: OutcomeThresholds = OutcomeThresholds()) -> RunOutcome:
    preds = np.asarray(val_predictions, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("classify_outcome needs at least one prediction")
    freq = np.bincount(preds) / preds.size
    nz = freq[freq > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    top = float(freq.max())
    if top == 1.0:
        label = "collapsed"
    elif val_acc <= thresholds.prior + thresholds.margin:
        label = "degenerate"
    else:
        label = "success"
    return RunOutcome(label, float(val_acc), max(entropy, 0.0), top)


# -- zero-training-error property ----------------------------------------

def lemma_check_zero_error(model: Classifier, dataset: Dataset, params: ParamVector,
                           grad_tol: float = 1e-6) -> tuple[bool, float]:
    """Return ``(|sum of wrong-example grads| < grad_tol, training error rate)``.

    An empty wrong set counts as stationary.
    """
    if not grad_tol > 0:
        raise ValueError("grad_tol must be positive")
    g = model.per_example_grads(params, dataset.X_train, dataset.y_train)
    wrong = ~g.correct
    err = float(wrong.mean())
    if not wrong.any():
        return True, err
    return bool(np.linalg.norm(g.grads[wrong].sum(axis=0)) < grad_tol), err


# -- smoothness estimate ---------------------------------------------------

def estimate_smoothness(grad_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray,
                        probes: int = 8, step: float = 1e-4, seed: int = 0,
                        power_iters: int = 0) -> float:
    """Max over random unit directions d of ``|grad(theta + step d) - grad(theta)| / step``.

    ``power_iters`` > 0 refines the best direction by repeatedly following the
    gradient difference, which tightens the estimate toward the top curvature.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    g0 = grad_fn(theta)
    rng = np.random.default_rng(seed)
    best, best_diff = 0.0, None
    for _ in range(probes):
        d = rng.standard_normal(theta.shape)
        d /= np.linalg.norm(d)
        diff = grad_fn(theta + step * d) - g0
        val = float(np.linalg.norm(diff)) / step
        if val > best:
            best, best_diff = val, diff
    for _ in range(power_iters):
        if best_diff is None:
            break
        nd = np.linalg.norm(best_diff)
        if nd == 0:
            break
        d = best_diff / nd
        diff = grad_fn(theta + step * d) - g0
        val = float(np.linalg.norm(diff)) / step
        best_diff = diff
        best = max(best, val)
    return best


def group_grad_fn(model: Classifier, X: np.ndarray, y: np.ndarray, mask: np.ndarray,
                  layout) -> Callable[[np.ndarray], np.ndarray]:
    """Gradient of the summed loss over the rows selected by ``mask`` (a frozen group)."""
    Xs, ys = X[mask], y[mask]

    def fn(theta: np.ndarray) -> np.ndarray:
        if Xs.shape[0] == 0:
            return np.zeros_like(theta)
        return model.per_example_grads(ParamVector(theta, layout), Xs, ys).grads.sum(axis=0)

    return fn


# -- two-step descent monitor ---------------------------------------------

@dataclass
class WindowResult:
    t: int
    cond_gamma: bool
    cond_norm: bool
    cond_lr: bool
    lr_near_limit: bool
    both_nonempty: bool
    M_est: float
    lw_start: float
    lw_end: float

    @property
    def gated(self) -> bool:
        return self.both_nonempty and self.cond_gamma and self.cond_norm and self.cond_lr

    @property
    def violated(self) -> bool:
        return self.gated and not self.lw_end < self.lw_start + 1e-9


@dataclass
class TheoremMonitorReport:
    windows: list[WindowResult] = field(default_factory=list)
    tol: float = 1e-9

    @property
    def gated_count(self) -> int:
        return sum(w.gated for w in self.windows)

    @property
    def violations(self) -> list[tuple[int, float]]:
        return [(w.t, w.lw_end - w.lw_start) for w in self.windows
                if w.gated and not w.lw_end < w.lw_start + self.tol]

    @property
    def flagged_near_limit(self) -> int:
        return sum(w.gated and w.lr_near_limit for w in self.windows)

    def merge(self, other: "TheoremMonitorReport") -> "TheoremMonitorReport":
        return TheoremMonitorReport(self.windows + other.windows, self.tol)

    def summary(self) -> dict:
        return {
            "windows": len(self.windows),
            "gated": self.gated_count,
            "violations": len(self.violations),
            "near_lr_limit": self.flagged_near_limit,
        }


def check_window(model: Classifier, params: ParamVector, X: np.ndarray, y: np.ndarray,
                 gamma_t: float, gamma_next: float, tau: float, lr: float, t: int = 0,
                 lr_fraction: float = 0.5, probes: int = 8, fd_step: float = 1e-4,
                 power_iters: int = 4, seed: int = 0) -> WindowResult:
    """Two DSGD steps on a frozen batch with a frozen wrong/correct split.

    ``L_W`` is the summed loss over the examples wrong at ``params``; it is
    evaluated at the start and after both steps. The learning-rate gate is
    ``lr <= lr_fraction * m / M_est``.
    """
    m = X.shape[0]
    g0 = model.per_example_grads(params, X, y)
    wrong = ~g0.correct
    both = bool(wrong.any() and (~wrong).any())
    cond_gamma = 0.0 < gamma_t <= tau and 0.0 < gamma_next <= tau and gamma_t != gamma_next

    def split(g):
        GW = g.grads[wrong].sum(axis=0)
        GC = g.grads[~wrong].sum(axis=0)
        return GW, GC, float(g.losses[wrong].sum())

    GW0, GC0, lw0 = split(g0)
    norm_ok0 = GW0 @ GW0 >= tau * tau * (GC0 @ GC0)
    result = WindowResult(t, cond_gamma, bool(norm_ok0), False, False, both, 0.0, lw0, lw0)
    if not (both and cond_gamma and norm_ok0):
        return result

    M = estimate_smoothness(group_grad_fn(model, X, y, wrong, params.layout), params.values,
                            probes=probes, step=fd_step, seed=seed, power_iters=power_iters)
    result.M_est = M
    limit = m / M if M > 0 else math.inf
    result.cond_lr = lr <= lr_fraction * limit
    result.lr_near_limit = lr >= 0.9 * limit

    theta1 = params.replace(params.values - (lr / m) * (GW0 + gamma_t * GC0))
    GW1, GC1, _ = split(model.per_example_grads(theta1, X, y))
    result.cond_norm = bool(norm_ok0 and GW1 @ GW1 >= tau * tau * (GC1 @ GC1))
    theta2 = theta1.replace(theta1.values - (lr / m) * (GW1 + gamma_next * GC1))
    result.lw_end = float(model.per_example_losses(theta2, X[wrong], y[wrong]).sum())
    return result


def theorem2_monitor(model: Classifier, params_history: Sequence[ParamVector],
                     batches: Sequence[tuple[np.ndarray, np.ndarray]], gammas: Sequence[float],
                     tau: float, lr: float, **kw) -> TheoremMonitorReport:
    """Check every window t with ``params_history[t]``, ``batches[t]``, ``gammas[t:t+2]``."""
    n = min(len(params_history), len(batches), len(gammas) - 1)
    if n < 1:
        raise ValueError("need at least one full window")
    report = TheoremMonitorReport()
    for t in range(n):
        X, y = batches[t]
        report.windows.append(
            check_window(model, params_history[t], X, y, gammas[t], gammas[t + 1], tau, lr, t=t, **kw)
        )
    return report
