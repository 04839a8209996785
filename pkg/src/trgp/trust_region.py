"""Single-shot selection of the old tasks most correlated with a new one.

Correlation is measured layer by layer as the fraction of the new task's
probe-gradient norm that survives projection onto an old task's input
subspace. Ratios are scale-free (homogeneous of degree zero in the gradient)
and equal the cosine of the angle between the gradient and its projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import DimensionMismatch, ZeroGradient
from .linalg import frobenius_norm, require_orthonormal


@dataclass
class TrustRegionSelection:
    """Chosen old tasks per layer, each with its projection ratio."""

    new_task_id: int
    epsilon_l: float
    top_k: int
    per_layer: dict[int, list[tuple[int, float]]]
    mode: str = "layerwise"
    candidates: dict[int, dict[int, float]] = field(default_factory=dict)

    def tasks_for_layer(self, layer_id: int) -> list[int]:
        return [t for t, _ in self.per_layer.get(layer_id, [])]

    def to_log(self) -> dict:
        """JSON-ready record for the per-task selection log."""
        return {
            "new_task": self.new_task_id,
            "mode": self.mode,
            "epsilon_l": self.epsilon_l,
            "top_k": self.top_k,
            "layers": [
                {
                    "layer": layer,
                    "candidates": [
                        {"task": t, "ratio": r}
                        for t, r in sorted(self.candidates.get(layer, {}).items())
                    ],
                    "chosen": [t for t, _ in chosen],
                }
                for layer, chosen in sorted(self.per_layer.items())
            ],
        }


def probe_gradient(model: network.ModelState, x: np.ndarray,
                   y: np.ndarray) -> list[np.ndarray]:
    """Per-layer loss gradients at the current weights, one forward-backward.

    No scaled projections are active: this probes the plain model the
    previous task left behind.
    """
    trace = network.forward_with_trace(model, None, x, y)
    return network.backward(trace, model, None).weights


def projection_ratio(grad: np.ndarray, basis: np.ndarray) -> float:
    """Fraction of the gradient's Frobenius norm inside span(basis)."""
    g = np.asarray(grad, dtype=np.float64)
    b = np.asarray(basis, dtype=np.float64)
    if b.shape[0] != g.shape[1]:
        raise DimensionMismatch(
            f"basis rows {b.shape[0]} != gradient cols {g.shape[1]}")
    denom = frobenius_norm(g)
    if denom == 0.0:
        raise ZeroGradient("projection ratio undefined for a zero gradient")
    require_orthonormal(b)
    return float(np.linalg.norm(g @ b) / denom)


def ratio_table(grads, store, layer_ids) -> dict[int, dict[int, float]]:
    """Ratios of every finished task's subspace against each layer gradient.

    Layers with a zero probe gradient get an empty candidate map, which
    select_top_k turns into an empty trust region for that layer.
    """
    table: dict[int, dict[int, float]] = {}
    for l in layer_ids:
        table[l] = {}
        if frobenius_norm(grads[l]) == 0.0:
            continue
        for lb in store.old_bases(l):
            table[l][lb.task_id] = projection_ratio(grads[l], lb.basis)
    return table


def select_top_k(ratios: dict[int, dict[int, float]], epsilon_l: float,
                 top_k: int, new_task_id: int) -> TrustRegionSelection:
    """Keep, per layer, the top-k ratios at or above the threshold.

    Ties break toward the smaller old-task id; an empty selection is valid
    and leaves the layer training purely in the orthogonal complement.
    """
    per_layer = {}
    for layer, cand in ratios.items():
        eligible = [(t, r) for t, r in cand.items() if r >= epsilon_l]
        eligible.sort(key=lambda tr: (-tr[1], tr[0]))
        per_layer[layer] = eligible[:top_k]
    return TrustRegionSelection(new_task_id=new_task_id, epsilon_l=epsilon_l,
                                top_k=top_k, per_layer=per_layer,
                                candidates={l: dict(c) for l, c in ratios.items()})


def select_taskwise(grads, store, layer_ids, epsilon_l: float, top_k: int,
                    new_task_id: int) -> TrustRegionSelection:
    """Ablation variant: one shared selection from the whole-network gradient."""
    total = np.sqrt(sum(frobenius_norm(grads[l]) ** 2 for l in layer_ids))
    candidates: dict[int, float] = {}
    if total > 0.0:
        task_ids = {lb.task_id for l in layer_ids for lb in store.old_bases(l)}
        for t in sorted(task_ids):
            num = 0.0
            for l in layer_ids:
                try:
                    b = store.basis_for(t, l).basis
                except KeyError:
                    continue
                num += float(np.sum((grads[l] @ b) ** 2))
            candidates[t] = float(np.sqrt(num) / total)
    eligible = [(t, r) for t, r in candidates.items() if r >= epsilon_l]
    eligible.sort(key=lambda tr: (-tr[1], tr[0]))
    chosen = eligible[:top_k]
    return TrustRegionSelection(new_task_id=new_task_id, epsilon_l=epsilon_l,
                                top_k=top_k,
                                per_layer={l: list(chosen) for l in layer_ids},
                                mode="taskwise",
                                candidates={l: dict(candidates) for l in layer_ids})
