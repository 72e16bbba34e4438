"""Softmax-linear and one-hidden-layer tanh MLP classifiers.

Parameters live in a flat float64 vector; ``Layout`` maps named blocks to
slices of it. Every evaluation is a pure function of (params, inputs).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, NamedTuple

import numpy as np

from .errors import EmptyBatchError, LayoutMismatchError, ShapeError

if TYPE_CHECKING:
    from .optim import FocalConfig

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class Layout:
    """Ordered named blocks; ``blocks`` is a tuple of (name, shape)."""

    blocks: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.blocks)

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, shape in self.blocks:
            n = int(np.prod(shape))
            out[name] = slice(start, start + n)
            start += n
        return out

    def names(self) -> list[str]:
        return [name for name, _ in self.blocks]

    def shape(self, name: str) -> tuple[int, ...]:
        return dict(self.blocks)[name]


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.layout.size:
            raise LayoutMismatchError(
                f"values of length {v.size} do not fit layout of size {self.layout.size}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def block(self, name: str) -> np.ndarray:
        return self.values[self.layout.slices()[name]].reshape(self.layout.shape(name))

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout


class PerExampleGrad(NamedTuple):
    example_index: int
    grad: np.ndarray
    loss: float
    predicted_class: int
    correct: bool


@dataclass(eq=False)
class PerExampleGrads:
    """Per-example gradients of one batch, stored as stacked arrays.

    ``grads[i]`` is the gradient of the unreduced loss of example ``i``.
    Iterating yields :class:`PerExampleGrad` records.
    """

    grads: np.ndarray  # (m, P)
    losses: np.ndarray  # (m,)
    predicted: np.ndarray  # (m,) int
    correct: np.ndarray  # (m,) bool
    indices: np.ndarray = field(default=None)  # (m,) int, example ids

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(self.grads.shape[0])

    def __len__(self) -> int:
        return self.grads.shape[0]

    def __iter__(self) -> Iterator[PerExampleGrad]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> PerExampleGrad:
        return PerExampleGrad(
            int(self.indices[i]),
            self.grads[i],
            float(self.losses[i]),
            int(self.predicted[i]),
            bool(self.correct[i]),
        )

    @classmethod
    def from_records(cls, records: list[PerExampleGrad]) -> "PerExampleGrads":
        if not records:
            raise EmptyBatchError("no per-example gradients")
        return cls(
            grads=np.stack([np.asarray(r.grad, dtype=np.float64) for r in records]),
            losses=np.array([r.loss for r in records], dtype=np.float64),
            predicted=np.array([r.predicted_class for r in records], dtype=np.int64),
            correct=np.array([r.correct for r in records], dtype=bool),
            indices=np.array([r.example_index for r in records], dtype=np.int64),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_labels(y: np.ndarray, num_classes: int) -> np.ndarray:
    """Accept integer labels (m,) or one-hot rows (m, K); return ints."""
    y = np.asarray(y)
    if y.ndim == 2:
        if y.shape[1] != num_classes:
            raise ShapeError(f"one-hot labels have {y.shape[1]} columns, model has {num_classes} classes")
        return y.argmax(axis=1)
    return y.astype(np.int64)


@dataclass(frozen=True)
class Classifier:
    """``kind`` is ``"linear"`` (softmax regression) or ``"mlp"`` (one tanh hidden layer)."""

    kind: str
    in_dim: int
    num_classes: int
    hidden: int = 16

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.in_dim < 1 or self.num_classes < 2 or self.hidden < 1:
            raise ValueError("in_dim >= 1, num_classes >= 2 and hidden >= 1 required")

    @property
    def layout(self) -> Layout:
        D, K, H = self.in_dim, self.num_classes, self.hidden
        if self.kind == "linear":
            return Layout((("W", (K, D)), ("b", (K,))))
        return Layout((("W1", (H, D)), ("b1", (H,)), ("W2", (K, H)), ("b2", (K,))))

    def init_params(self, seed: int) -> ParamVector:
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        rng = np.random.default_rng(seed)
        layout = self.layout
        parts = []
        for name, shape in layout.blocks:
            # every block's fan-in is the last dim of its layer's weight
            if name.startswith("W"):
                fan_in = shape[1]
            else:
                fan_in = self.in_dim if name in ("b", "b1") else self.hidden
            s = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-s, s, size=int(np.prod(shape))))
        return ParamVector(np.concatenate(parts), layout)

    def _check(self, params: ParamVector, X: np.ndarray) -> np.ndarray:
        if params.layout != self.layout:
            raise LayoutMismatchError("parameter layout does not belong to this classifier")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ShapeError(f"expected inputs with {self.in_dim} features, got shape {X.shape}")
        return X

    def _forward(self, params: ParamVector, X: np.ndarray):
        if self.kind == "linear":
            W, b = params.block("W"), params.block("b")
            return X @ W.T + b, None
        W1, b1 = params.block("W1"), params.block("b1")
        W2, b2 = params.block("W2"), params.block("b2")
        h = np.tanh(X @ W1.T + b1)
        return h @ W2.T + b2, h

    def logits(self, params: ParamVector, X: np.ndarray) -> np.ndarray:
        X = self._check(params, X)
        return self._forward(params, X)[0]

    def predict_proba(self, params: ParamVector, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(params, X))

    def predict(self, params: ParamVector, X: np.ndarray) -> np.ndarray:
        return self.logits(params, X).argmax(axis=1)

    def per_example_losses(self, params, X, y, focal: "FocalConfig | None" = None) -> np.ndarray:
        p = self.predict_proba(params, X)
        labels = _as_labels(y, self.num_classes)
        return _loss_from_pt(p[np.arange(len(labels)), labels], focal)

    def per_example_grads(self, params, X, y, focal: "FocalConfig | None" = None,
                          indices: np.ndarray | None = None) -> PerExampleGrads:
        X = self._check(params, X)
        m = X.shape[0]
        if m == 0:
            raise EmptyBatchError("per_example_grads needs a nonempty batch")
        labels = _as_labels(y, self.num_classes)
        if labels.shape[0] != m:
            raise ShapeError(f"{m} inputs but {labels.shape[0]} labels")
        o, h = self._forward(params, X)
        p = softmax(o)
        rows = np.arange(m)
        pt = p[rows, labels]
        Y = np.zeros_like(p)
        Y[rows, labels] = 1.0
        if focal is None:
            delta = p - Y
        else:
            # dL/do = dL/dp_t * p_t * (e_t - p)
            a, g = focal.alpha, focal.gamma
            pt_c = np.clip(pt, LOG_CLAMP, 1.0)
            one_minus = 1.0 - pt
            if g == 0:
                dl_dpt = -a / pt_c
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    lead = np.where(one_minus > 0, g * one_minus ** (g - 1) * np.log(pt_c), 0.0)
                dl_dpt = a * (lead - one_minus**g / pt_c)
            delta = (dl_dpt * pt)[:, None] * (Y - p)
        if self.kind == "linear":
            gW = delta[:, :, None] * X[:, None, :]
            grads = np.concatenate([gW.reshape(m, -1), delta], axis=1)
        else:
            W2 = params.block("W2")
            gW2 = delta[:, :, None] * h[:, None, :]
            dh = (delta @ W2) * (1.0 - h * h)
            gW1 = dh[:, :, None] * X[:, None, :]
            grads = np.concatenate(
                [gW1.reshape(m, -1), dh, gW2.reshape(m, -1), delta], axis=1
            )
        pred = o.argmax(axis=1)
        return PerExampleGrads(
            grads=grads,
            losses=_loss_from_pt(pt, focal),
            predicted=pred,
            correct=pred == labels,
            indices=np.arange(m) if indices is None else np.asarray(indices),
        )


def _loss_from_pt(pt: np.ndarray, focal) -> np.ndarray:
    ce = -np.log(np.clip(pt, LOG_CLAMP, 1.0))
    if focal is None:
        return ce
    return focal.alpha * (1.0 - pt) ** focal.gamma * ce


def forward(model: Classifier, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one input vector (or a batch of rows)."""
    p = model.predict_proba(params, x)
    return p[0] if np.asarray(x).ndim == 1 else p


def per_example_grads(model: Classifier, params: ParamVector, X, y, focal=None) -> PerExampleGrads:
    return model.per_example_grads(params, X, y, focal=focal)


def finite_diff_grad(model: Classifier, params: ParamVector, x, y, step: float = 1e-5,
                     focal=None) -> np.ndarray:
    """Central-difference gradient of a single example's loss. Test oracle only."""
    if step <= 0:
        raise ValueError("step must be positive")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y)
    Y = np.array([int(y.argmax()) if y.ndim == 1 else int(y)])
    base = params.values
    out = np.empty_like(base)
    for j in range(base.shape[0]):
        up = base.copy()
        up[j] += step
        dn = base.copy()
        dn[j] -= step
        lu = model.per_example_losses(params.replace(up), X, Y, focal)[0]
        ld = model.per_example_losses(params.replace(dn), X, Y, focal)[0]
        out[j] = (lu - ld) / (2.0 * step)
    return out


def batch_loss_decomposition(grads: PerExampleGrads | list[PerExampleGrad]) -> tuple[float, float, float]:
    """Return ``(L, L_W, L_C)``; ``L`` is computed as ``L_W + L_C``."""
    if not isinstance(grads, PerExampleGrads):
        if not grads:
            return 0.0, 0.0, 0.0
        grads = PerExampleGrads.from_records(list(grads))
    L_W = float(np.sum(grads.losses[~grads.correct]))
    L_C = float(np.sum(grads.losses[grads.correct]))
    return L_W + L_C, L_W, L_C
