"""Continual training loops: trust-region, projection-only, plain and joint.

One core mini-batch SGD loop serves all sequential methods; they differ only
in which correction terms are active and whether gradients are projected away
from the merged frozen basis:

* ``trgp``  - trust region selected once per task before any update, scaling
  matrices start at the identity and train jointly with the weights, weight
  gradients are projected.
* ``gpm``   - no trust region, no scaling matrices, projected gradients.
* ``sgd``   - nothing protected; the naive lower bound that forgets.
* ``multitask`` - one network trained on the shuffled union of all tasks,
  the usual upper-bound reference.

All trainers mutate the model in place and return it together with the
per-task artifacts. The first task never has old subspaces, so trgp and gpm
reduce exactly to plain SGD there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network, subspace, trust_region
from .errors import ConfigInvalid, DivergedLoss, EmptyDataset, NonFiniteLoss
from .seeds import named_rng

METHODS = ("trgp", "gpm", "sgd", "multitask")
HEAD_MODES = ("single", "per-task")
TRUST_MODES = ("layerwise", "taskwise")


@dataclass
class TrainerConfig:
    method: str = "trgp"
    epochs: int = 5
    batch_size: int = 10
    lr: float = 0.01
    q_lr: float | None = None          # scaling-matrix rate; defaults to lr
    epsilon_l: float = 0.5
    top_k: int = 2
    eps_th: float | tuple = 0.97       # scalar or one value per layer
    probe_batch: int = 64
    rep_samples: int = 300
    head: str = "single"
    trust: str = "layerwise"
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigInvalid(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigInvalid(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.epsilon_l <= 1.0:
            raise ConfigInvalid(f"epsilon_l must lie in [0, 1], got {self.epsilon_l}")
        if self.top_k < 0:
            raise ConfigInvalid(f"top_k must be >= 0, got {self.top_k}")
        for v in np.atleast_1d(np.asarray(self.eps_th, dtype=float)):
            if not 0.0 < v < 1.0:
                raise ConfigInvalid(f"eps_th values must lie in (0, 1), got {v}")
        if self.head not in HEAD_MODES:
            raise ConfigInvalid(f"head must be one of {HEAD_MODES}, got {self.head!r}")
        if self.trust not in TRUST_MODES:
            raise ConfigInvalid(f"trust must be one of {TRUST_MODES}, got {self.trust!r}")

    def eps_th_for(self, layer_id: int) -> float:
        vals = np.atleast_1d(np.asarray(self.eps_th, dtype=float))
        return float(vals[layer_id]) if vals.size > 1 else float(vals[0])

    @property
    def scaling_lr(self) -> float:
        return self.lr if self.q_lr is None else self.q_lr


@dataclass
class TaskArtifacts:
    """Everything a finished task leaves behind besides the shared weights."""

    task_id: int
    selection: trust_region.TrustRegionSelection | None = None
    scalings: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    new_bases: list[subspace.LayerBasis] = field(default_factory=list)
    frozen_coords: dict[int, np.ndarray] = field(default_factory=dict)
    head: np.ndarray | None = None
    final_train_loss: float = float("nan")


def _selection_map(store: subspace.SubspaceStore,
                   selection: trust_region.TrustRegionSelection | None,
                   scalings: dict[tuple[int, int], np.ndarray]) -> network.SelectionMap:
    sel: network.SelectionMap = {}
    if selection is None:
        return sel
    for layer, chosen in selection.per_layer.items():
        ps = []
        for old_task, _ratio in chosen:
            basis = store.basis_for(old_task, layer).basis
            ps.append(network.ScaledProjection(
                old_task_id=old_task, basis=basis,
                q=scalings[(layer, old_task)]))
        if ps:
            sel[layer] = ps
    return sel


def _sgd_epochs(model: network.ModelState, x: np.ndarray, y: np.ndarray,
                cfg: TrainerConfig, rng: np.random.Generator,
                merged: dict[int, np.ndarray | None] | None = None,
                selections: network.SelectionMap | None = None) -> float:
    """Shared mini-batch loop; returns the mean loss over the last epoch."""
    n = len(x)
    if n == 0:
        raise EmptyDataset("cannot train on an empty task")
    merged = merged or {}
    q_lr = cfg.scaling_lr
    epoch_loss = float("nan")
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                trace = network.forward_with_trace(model, selections, x[idx], y[idx])
            except NonFiniteLoss as exc:
                raise DivergedLoss(str(exc)) from exc
            losses.append(trace.loss)
            grads = network.backward(trace, model, selections)
            for l in range(model.n_layers):
                g = grads.weights[l]
                m = merged.get(l)
                if m is not None:
                    g = network.project_gradient(g, m)
                model.layers[l] -= cfg.lr * g
            if selections:
                for (layer, old_task), dq in grads.scalings.items():
                    for p in selections[layer]:
                        if p.old_task_id == old_task:
                            p.q -= q_lr * dq
        epoch_loss = float(np.mean(losses))
    return epoch_loss


def _probe_selection(model, store, x, y, cfg, task_index, root_seed, layer_ids):
    """Single-shot trust region from one probe batch at the inherited weights."""
    rng = named_rng(root_seed, "probe", task_index)
    size = min(cfg.probe_batch, len(x))
    idx = rng.choice(len(x), size=size, replace=False)
    grads = trust_region.probe_gradient(model, x[idx], y[idx])
    if cfg.trust == "taskwise":
        return trust_region.select_taskwise(grads, store, layer_ids,
                                            cfg.epsilon_l, cfg.top_k, task_index)
    ratios = trust_region.ratio_table(grads, store, layer_ids)
    return trust_region.select_top_k(ratios, cfg.epsilon_l, cfg.top_k, task_index)


def finalize_task(model: network.ModelState, store: subspace.SubspaceStore,
                  x: np.ndarray, cfg: TrainerConfig, artifacts: TaskArtifacts,
                  root_seed: int, layer_ids) -> subspace.SubspaceStore:
    """Collect representations, extract and merge bases, snapshot projections.

    Representations are collected under the task's effective weights so the
    stored subspace describes the function the task actually runs. Raises
    AlreadyFinalized through the store on a second call for the same task.
    """
    rng = named_rng(root_seed, "reps", artifacts.task_id)
    n = min(cfg.rep_samples, len(x))
    if n == 0:
        raise EmptyDataset("no samples available for representation collection")
    idx = rng.choice(len(x), size=n, replace=False)
    sel = _selection_map(store, artifacts.selection, artifacts.scalings)
    reps = subspace.collect_representations(model, x[idx], selections=sel,
                                            layer_ids=layer_ids,
                                            task_id=artifacts.task_id)
    bases = []
    for r in reps:
        old = store.old_bases(r.layer_id)
        eps = cfg.eps_th_for(r.layer_id)
        if old:
            bases.append(subspace.extract_basis_later_task(r, old, eps))
        else:
            bases.append(subspace.extract_basis_first_task(r, eps))
    store.add_task(artifacts.task_id, bases)
    artifacts.new_bases = bases
    # frozen-projection snapshot: coordinates of W inside this task's subspace
    for lb in bases:
        artifacts.frozen_coords[lb.layer_id] = model.layers[lb.layer_id] @ lb.basis
    return store


def train_task_trgp(model: network.ModelState, store: subspace.SubspaceStore,
                    x: np.ndarray, y: np.ndarray, cfg: TrainerConfig, *,
                    task_index: int, root_seed: int | None = None,
                    layer_ids=None):
    """One task of trust-region training; mutates and returns the model.

    The trust region is computed once before any update; scaling matrices
    start at the identity; weight updates are projected orthogonal to the
    merged basis of all old tasks. Task 0 reduces to plain SGD.
    """
    root_seed = cfg.seed if root_seed is None else root_seed
    layer_ids = list(range(model.n_layers)) if layer_ids is None else list(layer_ids)
    selection = None
    scalings: dict[tuple[int, int], np.ndarray] = {}
    if task_index > 0 and cfg.top_k > 0 and store.task_order:
        selection = _probe_selection(model, store, x, y, cfg,
                                     task_index, root_seed, layer_ids)
        for layer, chosen in selection.per_layer.items():
            for old_task, _ in chosen:
                k = store.basis_for(old_task, layer).rank
                scalings[(layer, old_task)] = np.eye(k)
    sel_map = _selection_map(store, selection, scalings)
    merged = {l: store.merged_matrix(l) for l in layer_ids}
    loss = _sgd_epochs(model, x, y, cfg, named_rng(root_seed, "shuffle", task_index),
                       merged=merged, selections=sel_map)
    artifacts = TaskArtifacts(task_id=task_index, selection=selection,
                              scalings=scalings, final_train_loss=loss)
    finalize_task(model, store, x, cfg, artifacts, root_seed, layer_ids)
    return model, artifacts


def train_task_gpm(model: network.ModelState, store: subspace.SubspaceStore,
                   x: np.ndarray, y: np.ndarray, cfg: TrainerConfig, *,
                   task_index: int, root_seed: int | None = None,
                   layer_ids=None):
    """Projection-only baseline: trust region disabled, otherwise identical."""
    root_seed = cfg.seed if root_seed is None else root_seed
    layer_ids = list(range(model.n_layers)) if layer_ids is None else list(layer_ids)
    merged = {l: store.merged_matrix(l) for l in layer_ids}
    loss = _sgd_epochs(model, x, y, cfg, named_rng(root_seed, "shuffle", task_index),
                       merged=merged, selections=None)
    artifacts = TaskArtifacts(task_id=task_index, final_train_loss=loss)
    finalize_task(model, store, x, cfg, artifacts, root_seed, layer_ids)
    return model, artifacts


def train_task_sgd(model: network.ModelState, x: np.ndarray, y: np.ndarray,
                   cfg: TrainerConfig, *, task_index: int,
                   root_seed: int | None = None):
    """Unprotected mini-batch SGD on one task; the forgetting lower bound."""
    root_seed = cfg.seed if root_seed is None else root_seed
    loss = _sgd_epochs(model, x, y, cfg, named_rng(root_seed, "shuffle", task_index))
    return model, TaskArtifacts(task_id=task_index, final_train_loss=loss)


def train_joint(model: network.ModelState, all_xy, cfg: TrainerConfig, *,
                root_seed: int | None = None):
    """Train once on the shuffled union of every task's training data."""
    root_seed = cfg.seed if root_seed is None else root_seed
    xs = [np.asarray(x) for x, _ in all_xy]
    ys = [np.asarray(y) for _, y in all_xy]
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    loss = _sgd_epochs(model, x, y, cfg, named_rng(root_seed, "shuffle", "joint"))
    return model, TaskArtifacts(task_id=-1, final_train_loss=loss)


# -- evaluation helpers -------------------------------------------------------

def eval_weights(model: network.ModelState, store: subspace.SubspaceStore | None,
                 artifacts: TaskArtifacts | None,
                 head: np.ndarray | None = None) -> list[np.ndarray]:
    """Effective weights a task runs at evaluation time.

    Applies only that task's stored scaling matrices (none for the baseline
    methods) and swaps in the task's head when one is given.
    """
    layers = list(model.layers)
    if head is not None:
        layers = layers[:-1] + [head]
    sel = {}
    if artifacts is not None and artifacts.selection is not None and store is not None:
        sel = _selection_map(store, artifacts.selection, artifacts.scalings)
    return [network.effective_weight(w, sel.get(l)) for l, w in enumerate(layers)]


def evaluate_accuracy(model, store, artifacts, x, y,
                      head: np.ndarray | None = None) -> float:
    logits = network.forward_logits(eval_weights(model, store, artifacts, head), x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def evaluate_logits(model, store, artifacts, x, head=None) -> np.ndarray:
    return network.forward_logits(eval_weights(model, store, artifacts, head), x)


def frozen_projection_drift(model: network.ModelState,
                            store: subspace.SubspaceStore,
                            artifacts_by_task: dict[int, TaskArtifacts]) -> float:
    """Largest Frobenius drift of any old task's in-subspace weight component.

    For every finished task j and layer l this compares the current
    ``W_l @ B_j`` coordinates against the snapshot taken when j finished;
    orthogonal-projection training keeps the difference at rounding level.
    """
    worst = 0.0
    for task_id, art in artifacts_by_task.items():
        for layer_id, coords in art.frozen_coords.items():
            basis = store.basis_for(task_id, layer_id).basis
            drift = np.linalg.norm(model.layers[layer_id] @ basis - coords)
            worst = max(worst, float(drift))
    return worst
