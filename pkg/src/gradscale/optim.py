"""Update rules: DSGD, plain (S)GD, PCGrad over the wrong/correct split,
plus focal loss, NoisyTune-style init noise and SWA averaging.

All steps are pure: params in, new ParamVector out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatchError, LayoutMismatchError, ScheduleError
from .model import LOG_CLAMP, ParamVector, PerExampleGrad, PerExampleGrads

SCHEDULE_KINDS = ("linear-asc", "linear-desc", "cosine", "static")
PCGRAD_RESIDUAL_RTOL = 1e-12


@dataclass(frozen=True)
class ScalerSchedule:
    kind: str = "linear-asc"
    tau: float = 1.0
    horizon: int = 1
    static_value: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        # tau = 0 is allowed: the tau sweep includes it
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.static_value <= 1.0:
            raise ValueError("static_value must lie in [0, 1]")

    def with_horizon(self, horizon: int) -> "ScalerSchedule":
        return ScalerSchedule(self.kind, self.tau, horizon, self.static_value)

    @property
    def cap(self) -> float:
        return self.static_value if self.kind == "static" else self.tau


def gamma_at(sched: ScalerSchedule, t: int) -> float:
    T = sched.horizon
    if not 0 <= t <= T:
        raise ScheduleError(f"t={t} outside [0, {T}]")
    if sched.kind == "linear-asc":
        return (t / T) * sched.tau
    if sched.kind == "linear-desc":
        return sched.tau * (1.0 - t / T)
    if sched.kind == "cosine":
        return (sched.tau / 2.0) * (1.0 - math.cos(math.pi * t / T))
    return sched.static_value


@dataclass(frozen=True)
class StepConfig:
    lr: float
    batch_size: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(eq=False)
class BatchPartition:
    wrong_idx: np.ndarray
    correct_idx: np.ndarray
    G_W: np.ndarray
    G_C: np.ndarray

    @property
    def size(self) -> int:
        return len(self.wrong_idx) + len(self.correct_idx)

    @property
    def total(self) -> np.ndarray:
        """``G_W + G_C`` in the one summation order every rule uses."""
        return self.G_W + self.G_C

    def rho(self, gamma: float) -> float:
        """Effective scaling mass ``(|B_W| + gamma |B_C|) / m``."""
        return (len(self.wrong_idx) + gamma * len(self.correct_idx)) / self.size


def partition(grads: PerExampleGrads | list[PerExampleGrad]) -> BatchPartition:
    if not isinstance(grads, PerExampleGrads):
        grads = PerExampleGrads.from_records(list(grads))
    if len(grads) == 0:
        raise EmptyBatchError("cannot partition an empty batch")
    wrong = np.flatnonzero(~grads.correct)
    right = np.flatnonzero(grads.correct)
    P = grads.grads.shape[1]
    G_W = grads.grads[wrong].sum(axis=0) if wrong.size else np.zeros(P)
    G_C = grads.grads[right].sum(axis=0) if right.size else np.zeros(P)
    return BatchPartition(wrong, right, G_W, G_C)


def _apply(params: ParamVector, direction: np.ndarray, scale: float) -> ParamVector:
    return params.replace(params.values - scale * direction)


def sgd_step(params: ParamVector, total_grad: np.ndarray, cfg: StepConfig,
             m: int | None = None) -> ParamVector:
    """``params - (lr / m) * G``; ``m`` defaults to ``cfg.batch_size``."""
    m = cfg.batch_size if m is None else m
    return _apply(params, np.asarray(total_grad, dtype=np.float64), cfg.lr / m)


def dsgd_direction(part: BatchPartition, gamma: float) -> np.ndarray:
    # 1.0 * G_C == G_C exactly, so gamma = 1 reproduces part.total bit for bit
    return part.G_W + gamma * part.G_C


def dsgd_step(params: ParamVector, part: BatchPartition, cfg: StepConfig, gamma: float) -> ParamVector:
    """``params - (lr / m) (G_W + gamma G_C)`` with ``m`` the partition's actual size."""
    if not 0.0 <= gamma <= 1.0:
        raise ScheduleError(f"gamma={gamma} outside [0, 1]")
    return _apply(params, dsgd_direction(part, gamma), cfg.lr / part.size)


@dataclass(frozen=True)
class PCGradDecision:
    branch: str  # "only-wrong" | "only-correct" | "plain-sum" | "projected"
    direction: np.ndarray
    scale_count: int
    projected_W: np.ndarray | None = None
    projected_C: np.ndarray | None = None


def _project_out(a: np.ndarray, b: np.ndarray, dot: float, b_sq: float, a_sq: float) -> np.ndarray:
    """``a - (a.b / |b|^2) b``, orthogonalised twice.

    Nearly antiparallel inputs lose most digits in the first subtraction, so
    a second pass removes what is left along ``b``. A residual at rounding
    level relative to ``a`` is set to exactly zero.
    """
    r = a - (dot / b_sq) * b
    r = r - (float(r @ b) / b_sq) * b
    if float(r @ r) <= (PCGRAD_RESIDUAL_RTOL**2) * a_sq:
        return np.zeros_like(r)
    return r


def pcgrad_direction(part: BatchPartition) -> PCGradDecision:
    """Summed PCGrad direction for the two groups and the count it is averaged by.

    The projection uses squared norms: ``proj_b(a) = (a.b / |b|^2) b``.
    """
    nW, nC = len(part.wrong_idx), len(part.correct_idx)
    if nW == 0:
        return PCGradDecision("only-correct", part.G_C, nC)
    if nC == 0:
        return PCGradDecision("only-wrong", part.G_W, nW)
    dot = float(part.G_W @ part.G_C)
    nw2, nc2 = float(part.G_W @ part.G_W), float(part.G_C @ part.G_C)
    # a squared norm can underflow to 0 while dot < 0; there is nothing to project onto then
    if dot >= 0.0 or nw2 == 0.0 or nc2 == 0.0:
        return PCGradDecision("plain-sum", part.total, part.size)
    gw_proj = _project_out(part.G_W, part.G_C, dot, nc2, nw2)
    gc_proj = _project_out(part.G_C, part.G_W, dot, nw2, nc2)
    return PCGradDecision("projected", gw_proj + gc_proj, part.size, gw_proj, gc_proj)


def pcgrad_step(params: ParamVector, part: BatchPartition, cfg: StepConfig) -> ParamVector:
    d = pcgrad_direction(part)
    return _apply(params, d.direction, cfg.lr / d.scale_count)


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("focal alpha must be positive")
        if self.gamma < 0:
            raise ValueError("focal gamma must be nonnegative")


def focal_per_example_loss(p_t: float, cfg: FocalConfig) -> float:
    """``alpha (1 - p_t)^gamma (-log p_t)`` with ``p_t`` clamped below at 1e-12."""
    pt = min(max(float(p_t), LOG_CLAMP), 1.0)
    return cfg.alpha * (1.0 - pt) ** cfg.gamma * -math.log(pt)


def noisytune_perturb(params: ParamVector, lam: float, seed: int) -> ParamVector:
    """Add U(-lam*std, lam*std) noise to each block, std taken over that block."""
    if lam < 0:
        raise ValueError("noise intensity must be nonnegative")
    if lam == 0:
        return params
    rng = np.random.default_rng(seed)
    out = params.values.copy()
    for name, sl in params.layout.slices().items():
        block = out[sl]
        sigma = float(np.std(block))
        out[sl] = block + rng.uniform(-lam * sigma, lam * sigma, size=block.shape)
    return params.replace(out)


def swa_average(checkpoints: list[ParamVector]) -> ParamVector:
    if not checkpoints:
        raise EmptyBatchError("swa_average needs at least one checkpoint")
    first = checkpoints[0]
    for c in checkpoints[1:]:
        if c.layout != first.layout:
            raise LayoutMismatchError("checkpoints have different layouts")
    if len(checkpoints) == 1:
        return first
    # mean of offsets from the first checkpoint keeps identical inputs exact
    offsets = np.stack([c.values - first.values for c in checkpoints])
    return first.replace(first.values + offsets.mean(axis=0))
