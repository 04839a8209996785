"""Fully connected network with explicit traces and scaled weight projections.

Layers are bias-free weight matrices ``W`` of shape (out_width, in_width);
hidden layers apply ReLU, the last layer feeds softmax cross-entropy. The
model a task actually runs is built from effective weights

    W_eff = W + sum_j  W @ B_j @ (Q_j - I) @ B_j.T

where each ``(B_j, Q_j)`` pair re-scales the frozen component of ``W`` inside
an old task's input subspace. With every ``Q_j`` equal to the identity (or no
pairs at all) the effective weight is ``W`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyBatch,
    NonFiniteLoss,
    ShapeMismatch,
    TraceMismatch,
)


@dataclass
class ModelState:
    """Ordered layer weights; layers[l] maps layer-l inputs to its outputs."""

    layers: list[np.ndarray]

    def __post_init__(self):
        for l in range(len(self.layers) - 1):
            if self.layers[l + 1].shape[1] != self.layers[l].shape[0]:
                raise DimensionMismatch(
                    f"layer {l} output width {self.layers[l].shape[0]} does not "
                    f"feed layer {l + 1} input width {self.layers[l + 1].shape[1]}")
        for l, w in enumerate(self.layers):
            if not np.isfinite(w).all():
                raise ValueError(f"layer {l} weights contain non-finite entries")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_widths(self) -> list[int]:
        return [w.shape[1] for w in self.layers]

    def copy(self) -> "ModelState":
        return ModelState([w.copy() for w in self.layers])


def init_mlp(widths, rng: np.random.Generator) -> ModelState:
    """He-scaled random initialization for widths = [in, hidden..., out]."""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        layers.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
    return ModelState(layers)


@dataclass
class ScaledProjection:
    """One (old-task basis, scaling matrix) pair active at a layer."""

    old_task_id: int
    basis: np.ndarray   # in_width x k, orthonormal columns
    q: np.ndarray       # k x k

    def __post_init__(self):
        k = self.basis.shape[1]
        if self.q.shape != (k, k):
            raise DimensionMismatch(
                f"scaling matrix {self.q.shape} does not match basis rank {k}")


# per-layer lists of active scaled projections; absent layer means none
SelectionMap = dict[int, list[ScaledProjection]]


def effective_weight(w: np.ndarray, projections) -> np.ndarray:
    """Apply the scaled-projection correction terms to one weight matrix.

    Returns ``w`` itself (same object) when there are no projections, so the
    plain-SGD code path stays bitwise identical to an unmodified network.
    """
    if not projections:
        return w
    out = w.copy()
    for p in projections:
        if p.basis.shape[0] != w.shape[1]:
            raise DimensionMismatch(
                f"basis rows {p.basis.shape[0]} != layer input width {w.shape[1]}")
        wb = w @ p.basis
        out += (wb @ (p.q - np.eye(p.q.shape[0]))) @ p.basis.T
    return out


def effective_weights(model: ModelState, selections: SelectionMap | None) -> list[np.ndarray]:
    sel = selections or {}
    return [effective_weight(w, sel.get(l)) for l, w in enumerate(model.layers)]


def forward_logits(weights, x: np.ndarray) -> np.ndarray:
    """Plain forward pass through explicit weight matrices (ReLU hidden)."""
    h = x
    for w in weights[:-1]:
        h = np.maximum(h @ w.T, 0.0)
    return h @ weights[-1].T


def _softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    # non-finite logits surface as a non-finite loss, checked by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        zmax = logits.max(axis=1, keepdims=True)
        lse = zmax + np.log(np.sum(np.exp(logits - zmax), axis=1, keepdims=True))
        probs = np.exp(logits - lse)
        picked = logits[np.arange(len(targets)), targets]
        loss = float(np.mean(lse.ravel() - picked))
    return loss, probs


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    layer_inputs: list[np.ndarray]  # layer_inputs[l] = batch input to layer l
    logits: np.ndarray
    loss: float
    probs: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    selection_key: tuple = field(repr=False, default=())


def _selection_key(model: ModelState, selections: SelectionMap | None) -> tuple:
    sel = selections or {}
    return (tuple(w.shape for w in model.layers),
            tuple(sorted((l, p.old_task_id, p.basis.shape[1])
                         for l, ps in sel.items() for p in ps)))


def forward_with_trace(model: ModelState, selections: SelectionMap | None,
                       x: np.ndarray, y: np.ndarray) -> ForwardTrace:
    """Forward a batch under effective weights, recording each layer's input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyBatch(f"batch must be a non-empty 2-d array, got {x.shape}")
    if x.shape[1] != model.layers[0].shape[1]:
        raise ShapeMismatch(
            f"input width {x.shape[1]} != layer-0 width {model.layers[0].shape[1]}")
    weights = effective_weights(model, selections)
    inputs = [x]
    h = x
    with np.errstate(over="ignore"):  # diverged weights surface as NonFiniteLoss
        for w in weights[:-1]:
            h = np.maximum(h @ w.T, 0.0)
            inputs.append(h)
        logits = h @ weights[-1].T
    loss, probs = _softmax_cross_entropy(logits, y)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    return ForwardTrace(layer_inputs=inputs, logits=logits, loss=loss,
                        probs=probs, targets=y,
                        selection_key=_selection_key(model, selections))


@dataclass
class LayerGradients:
    weights: list[np.ndarray]                      # dL/dW per layer
    scalings: dict[tuple[int, int], np.ndarray]    # (layer, old_task) -> dL/dQ


def chain_to_parameters(g_eff: np.ndarray, w: np.ndarray, projections):
    """Map an effective-weight gradient onto (dL/dW, per-projection dL/dQ).

    ``dL/dW = g_eff @ (I + sum B (Q - I) B.T).T`` and
    ``dL/dQ_j = B_j.T @ W.T @ g_eff @ B_j``.
    """
    if not projections:
        return g_eff, {}
    dw = g_eff.copy()
    dqs = {}
    for p in projections:
        gb = g_eff @ p.basis
        dw += (gb @ (p.q - np.eye(p.q.shape[0])).T) @ p.basis.T
        dqs[p.old_task_id] = (w @ p.basis).T @ gb
    return dw, dqs


def backward(trace: ForwardTrace, model: ModelState,
             selections: SelectionMap | None) -> LayerGradients:
    """Gradients of the traced loss w.r.t. every W and every active Q."""
    if trace.selection_key != _selection_key(model, selections):
        raise TraceMismatch("trace was produced under a different model/selections")
    sel = selections or {}
    weights = effective_weights(model, selections)
    n = trace.logits.shape[0]
    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(n), trace.targets] = 1.0
    g = (trace.probs - onehot) / n  # dL/dlogits

    d_weights: list[np.ndarray | None] = [None] * model.n_layers
    d_scalings: dict[tuple[int, int], np.ndarray] = {}
    for l in range(model.n_layers - 1, -1, -1):
        x_l = trace.layer_inputs[l]
        g_eff = g.T @ x_l
        dw, dqs = chain_to_parameters(g_eff, model.layers[l], sel.get(l))
        d_weights[l] = dw
        for old_task, dq in dqs.items():
            d_scalings[(l, old_task)] = dq
        if l > 0:
            dx = g @ weights[l]
            g = dx * (trace.layer_inputs[l] > 0.0)
    return LayerGradients(weights=d_weights, scalings=d_scalings)


def project_gradient(grad: np.ndarray, merged: np.ndarray | None) -> np.ndarray:
    """Remove the gradient component inside the merged frozen subspace.

    Returns ``grad - grad @ M @ M.T``; with no merged basis the gradient is
    returned unchanged.
    """
    if merged is None or merged.shape[1] == 0:
        return grad
    if merged.shape[0] != grad.shape[1]:
        raise DimensionMismatch(
            f"merged basis rows {merged.shape[0]} != gradient cols {grad.shape[1]}")
    return grad - (grad @ merged) @ merged.T
