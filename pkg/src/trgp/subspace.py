"""Per-task input subspaces and the merged frozen basis.

After a task finishes, each layer's inputs over a sample of that task's data
form a representation matrix. An energy threshold on its squared singular
values picks the smallest basis capturing the requested fraction; for later
tasks the basis is drawn from the union of old basis vectors (ranked by the
energy they capture of the new representations) and fresh directions from the
residual. New directions are appended to a per-layer merged basis that the
trainer projects gradients away from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import (
    AlreadyFinalized,
    EmptyDataset,
    ThresholdUnreachable,
    ZeroMatrix,
)
from .linalg import frobenius_norm, require_orthonormal, svd_thin

DEDUP_TOL = 1e-3
STORE_FORMAT_VERSION = 1


@dataclass
class RepresentationMatrix:
    """Layer inputs as columns: shape (layer input width, n samples)."""

    task_id: int
    layer_id: int
    matrix: np.ndarray


@dataclass
class LayerBasis:
    """Orthonormal basis of one (task, layer) subspace.

    reused_flags marks columns that were taken from an older task's basis
    rather than extracted fresh from this task's representations.
    """

    task_id: int
    layer_id: int
    basis: np.ndarray
    reused_flags: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass
class MergedBasis:
    """Union of all old tasks' directions at one layer, kept orthonormal."""

    layer_id: int
    basis: np.ndarray
    contributors: list[int] = field(default_factory=list)
    saturated: bool = False

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def collect_representations(model: network.ModelState, inputs: np.ndarray,
                            selections: network.SelectionMap | None = None,
                            layer_ids=None, task_id: int = -1) -> list[RepresentationMatrix]:
    """Layer-input matrices for a sample batch under the task's effective weights."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset(f"need a non-empty 2-d sample array, got shape {x.shape}")
    dummy = np.zeros(x.shape[0], dtype=np.intp)
    trace = network.forward_with_trace(model, selections, x, dummy)
    if layer_ids is None:
        layer_ids = range(model.n_layers)
    return [RepresentationMatrix(task_id=task_id, layer_id=l,
                                 matrix=trace.layer_inputs[l].T.copy())
            for l in layer_ids]


def _orthonormal_residual(u: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Component of u orthogonal to span(basis), two Gram-Schmidt passes."""
    r = u.astype(np.float64, copy=True)
    for _ in range(2):
        if basis.shape[1]:
            r = r - basis @ (basis.T @ r)
    return r


def _dedup_concat(bases, width: int, dedup_tol: float = DEDUP_TOL) -> np.ndarray:
    """Concatenate basis matrices, dropping columns already spanned."""
    merged = np.zeros((width, 0))
    for b in bases:
        for j in range(b.shape[1]):
            r = _orthonormal_residual(b[:, j], merged)
            norm = np.linalg.norm(r)
            if norm > dedup_tol:
                merged = np.hstack([merged, (r / norm)[:, None]])
    return merged


def _minimal_rank(values: np.ndarray, threshold: float, total: float) -> int:
    """Smallest prefix of descending energies whose sum reaches the threshold."""
    cum = np.cumsum(values)
    reached = np.nonzero(cum >= threshold)[0]
    if reached.size == 0:
        if threshold - (cum[-1] if cum.size else 0.0) > 1e-9 * total:
            raise ThresholdUnreachable(
                f"available energy {cum[-1] if cum.size else 0.0:.6g} cannot reach "
                f"threshold {threshold:.6g}")
        return len(values)
    return int(reached[0]) + 1


def extract_basis_first_task(rep: RepresentationMatrix, eps_th: float) -> LayerBasis:
    """Minimal-rank left singular basis capturing eps_th of squared energy."""
    if not 0.0 < eps_th < 1.0:
        raise ValueError(f"eps_th must lie in (0, 1), got {eps_th}")
    total = frobenius_norm(rep.matrix) ** 2
    if total == 0.0:
        raise ZeroMatrix("representation matrix is all zero")
    res = svd_thin(rep.matrix)
    k = _minimal_rank(res.singular_values ** 2, eps_th * total, total)
    return LayerBasis(task_id=rep.task_id, layer_id=rep.layer_id,
                      basis=res.left_vectors[:, :k].copy(),
                      reused_flags=np.zeros(k, dtype=bool))


def extract_basis_later_task(rep: RepresentationMatrix, old_bases,
                             eps_th: float, dedup_tol: float = DEDUP_TOL) -> LayerBasis:
    """Basis for a later task, reusing old directions where they carry energy.

    Ranks every candidate direction by the squared-singular-value energy it
    captures from this task's representations: old basis vectors u score
    ``u' R R' u`` and fresh directions come from an SVD of the residual of R
    outside the old span. The smallest prefix of the descending ranking that
    reaches ``eps_th * ||R||_F^2`` becomes the basis.
    """
    if not 0.0 < eps_th < 1.0:
        raise ValueError(f"eps_th must lie in (0, 1), got {eps_th}")
    r_mat = rep.matrix
    total = frobenius_norm(r_mat) ** 2
    if total == 0.0:
        raise ZeroMatrix("representation matrix is all zero")
    old = _dedup_concat([b.basis for b in old_bases], r_mat.shape[0], dedup_tol)
    if old.shape[1] == 0:
        return extract_basis_first_task(rep, eps_th)

    # energy each retained old direction captures of the new representations
    proj_coords = old.T @ r_mat                       # k_old x n
    deltas = np.einsum("ij,ij->i", proj_coords, proj_coords)

    residual = r_mat - old @ proj_coords
    res = svd_thin(residual)
    sig2 = res.singular_values ** 2

    values = np.concatenate([deltas, sig2])
    order = np.argsort(-values, kind="stable")        # old wins exact ties
    k = _minimal_rank(values[order], eps_th * total, total)

    columns, flags = [], []
    n_old = len(deltas)
    for idx in order[:k]:
        if idx < n_old:
            columns.append(old[:, idx])
            flags.append(True)
        else:
            columns.append(res.left_vectors[:, idx - n_old])
            flags.append(False)
    return LayerBasis(task_id=rep.task_id, layer_id=rep.layer_id,
                      basis=np.column_stack(columns),
                      reused_flags=np.array(flags, dtype=bool))


def merge_into_global(merged: MergedBasis, new_basis: LayerBasis,
                      dedup_tol: float = DEDUP_TOL) -> MergedBasis:
    """Append the genuinely new directions of a task basis to the merged one.

    A column is appended (after re-orthonormalization against the current
    merged basis) only when its residual norm exceeds the dedup tolerance.
    Appending stops at full width; the result is then flagged saturated.
    """
    width = merged.basis.shape[0]
    out = merged.basis.copy()
    saturated = merged.saturated
    appended = False
    for j in range(new_basis.basis.shape[1]):
        r = _orthonormal_residual(new_basis.basis[:, j], out)
        norm = np.linalg.norm(r)
        if norm <= dedup_tol:
            continue
        if out.shape[1] >= width:
            saturated = True
            break
        out = np.hstack([out, (r / norm)[:, None]])
        appended = True
    contributors = list(merged.contributors)
    if appended and new_basis.task_id not in contributors:
        contributors.append(new_basis.task_id)
    return MergedBasis(layer_id=merged.layer_id, basis=out,
                       contributors=contributors, saturated=saturated)


class SubspaceStore:
    """Append-only store of per-task bases and per-layer merged bases.

    Mutated once per task by ``add_task``; reads are safe afterwards. The
    store serializes to an .npz snapshot with a format-version tag.
    """

    def __init__(self, layer_widths):
        self.layer_widths = list(layer_widths)
        self.merged: dict[int, MergedBasis] = {
            l: MergedBasis(layer_id=l, basis=np.zeros((w, 0)))
            for l, w in enumerate(self.layer_widths)}
        self.bases: dict[tuple[int, int], LayerBasis] = {}
        self.task_order: list[int] = []

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    def is_finalized(self, task_id: int) -> bool:
        return task_id in self.task_order

    def add_task(self, task_id: int, layer_bases, dedup_tol: float = DEDUP_TOL) -> None:
        if self.is_finalized(task_id):
            raise AlreadyFinalized(f"task {task_id} already has stored bases")
        for lb in layer_bases:
            require_orthonormal(lb.basis, name=f"basis[task={task_id},layer={lb.layer_id}]")
            self.bases[(task_id, lb.layer_id)] = lb
            self.merged[lb.layer_id] = merge_into_global(
                self.merged[lb.layer_id], lb, dedup_tol)
        self.task_order.append(task_id)

    def old_bases(self, layer_id: int) -> list[LayerBasis]:
        return [self.bases[(t, layer_id)] for t in self.task_order
                if (t, layer_id) in self.bases]

    def basis_for(self, task_id: int, layer_id: int) -> LayerBasis:
        return self.bases[(task_id, layer_id)]

    def merged_matrix(self, layer_id: int) -> np.ndarray | None:
        m = self.merged[layer_id].basis
        return m if m.shape[1] else None

    def save(self, path) -> None:
        payload = {
            "format_version": np.array(STORE_FORMAT_VERSION, dtype=np.int64),
            "layer_widths": np.asarray(self.layer_widths, dtype=np.int64),
            "task_order": np.asarray(self.task_order, dtype=np.int64),
        }
        for (t, l), lb in self.bases.items():
            payload[f"basis_t{t}_l{l}"] = lb.basis
            payload[f"flags_t{t}_l{l}"] = lb.reused_flags
        for l, mb in self.merged.items():
            payload[f"merged_l{l}"] = mb.basis
            payload[f"contrib_l{l}"] = np.asarray(mb.contributors, dtype=np.int64)
            payload[f"saturated_l{l}"] = np.array(mb.saturated)
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "SubspaceStore":
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != STORE_FORMAT_VERSION:
                raise ValueError(f"unsupported store format version {version}")
            store = cls(data["layer_widths"].tolist())
            store.task_order = data["task_order"].tolist()
            for key in data.files:
                if key.startswith("basis_t"):
                    t, l = (int(v) for v in key[7:].split("_l"))
                    store.bases[(t, l)] = LayerBasis(
                        task_id=t, layer_id=l, basis=data[key],
                        reused_flags=data[f"flags_t{t}_l{l}"])
            for l in range(store.n_layers):
                store.merged[l] = MergedBasis(
                    layer_id=l, basis=data[f"merged_l{l}"],
                    contributors=data[f"contrib_l{l}"].tolist(),
                    saturated=bool(data[f"saturated_l{l}"]))
        return store
