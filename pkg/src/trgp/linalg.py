"""Dense matrix primitives: thin SVD, Frobenius norms, subspace projection.

All routines operate on float64 numpy arrays and are pure functions of their
inputs. The SVD is a one-sided Jacobi iteration with a round-robin pair
schedule, which keeps every run bitwise deterministic and needs no LAPACK.

Matrix convention used throughout the package: a subspace basis ``B`` is an
``m x k`` matrix with orthonormal columns, and the projection of a matrix
``A`` (whose rows live in the same ``m``-dimensional space) onto ``span(B)``
is ``A @ B @ B.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyMatrix,
    NonOrthonormalBasis,
    NumericalFailure,
)

ORTHONORMALITY_TOL = 1e-6
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-d array, raising on NaN/Inf entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {m.shape}")
    if m.size and not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(m)


def frobenius_norm(a) -> float:
    """Square root of the sum of squared entries; 0 only for the zero matrix."""
    m = as_matrix(a)
    return float(np.sqrt(np.sum(m * m)))


def orthonormality_error(basis: np.ndarray) -> float:
    """Largest absolute deviation of basis.T @ basis from the identity."""
    b = np.asarray(basis, dtype=np.float64)
    if b.shape[1] == 0:
        return 0.0
    gram = b.T @ b
    return float(np.max(np.abs(gram - np.eye(b.shape[1]))))


def require_orthonormal(basis: np.ndarray, tol: float = ORTHONORMALITY_TOL,
                        name: str = "basis") -> None:
    err = orthonormality_error(basis)
    if err > tol:
        raise NonOrthonormalBasis(
            f"{name} deviates from orthonormality by {err:.3e} (tol {tol:.1e})")


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = U @ diag(s) @ V.T`` with ``r = min(rows, cols)``.

    left_vectors: ``m x r`` with orthonormal columns.
    singular_values: length ``r``, sorted descending, all >= 0.
    right_vectors: ``n x r`` with orthonormal columns.
    """

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank_energy(self) -> np.ndarray:
        """Cumulative squared singular values, used for energy thresholds."""
        return np.cumsum(self.singular_values ** 2)


def _round_robin_pairs(n: int):
    """Schedule of (n-1) rounds of disjoint column pairs covering all pairs.

    Classic circle method: index 0 stays fixed, the rest rotate. With odd n a
    dummy index n is added and pairs touching it are dropped.
    """
    players = list(range(n))
    if n % 2 == 1:
        players.append(n)  # dummy
    half = len(players) // 2
    rounds = []
    for _ in range(len(players) - 1):
        pairs = [(players[i], players[-1 - i]) for i in range(half)]
        rounds.append([(p, q) for p, q in pairs if p < n and q < n])
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_orthogonalize(g: np.ndarray, v: np.ndarray,
                          tol: float, max_sweeps: int) -> None:
    """Rotate column pairs of g (and v) until all columns are orthogonal.

    Mutates g and v in place. Rotations within one round act on disjoint
    column pairs, so they are applied as a single batched update.
    """
    n = g.shape[1]
    if n < 2:
        return
    rounds = _round_robin_pairs(n)
    for _ in range(max_sweeps):
        worst = 0.0
        for pairs in rounds:
            p = np.fromiter((a for a, _ in pairs), dtype=np.intp)
            q = np.fromiter((b for _, b in pairs), dtype=np.intp)
            gp = g[:, p]
            gq = g[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            denom = np.sqrt(alpha * beta)
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where(denom > 0.0, np.abs(gamma) / denom, 0.0)
            round_worst = float(rel.max()) if rel.size else 0.0
            worst = max(worst, round_worst)
            mask = rel > tol
            if not mask.any():
                continue
            pm, qm = p[mask], q[mask]
            gam = gamma[mask]
            zeta = (beta[mask] - alpha[mask]) / (2.0 * gam)
            # sign(0) must be +1 (45-degree rotation when norms tie), and the
            # asymptotic branch avoids overflow in zeta**2 for extreme ratios
            sgn = np.where(zeta >= 0.0, 1.0, -1.0)
            with np.errstate(over="ignore", divide="ignore"):
                t = np.where(np.abs(zeta) > 1e150, 0.5 / zeta,
                             sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            gpm = g[:, pm]
            gqm = g[:, qm]
            g[:, pm] = c * gpm - s * gqm
            g[:, qm] = s * gpm + c * gqm
            vpm = v[:, pm]
            vqm = v[:, qm]
            v[:, pm] = c * vpm - s * vqm
            v[:, qm] = s * vpm + c * vqm
        if worst <= tol:
            return
    raise NumericalFailure(
        f"Jacobi SVD did not converge within {max_sweeps} sweeps")


def _fill_zero_columns(u: np.ndarray, zero_slots: np.ndarray) -> None:
    """Replace zero columns of u with deterministic orthonormal completions."""
    m = u.shape[0]
    have = [j for j in range(u.shape[1]) if j not in set(zero_slots.tolist())]
    basis = u[:, have].copy() if have else np.zeros((m, 0))
    for slot in zero_slots:
        # unit vector least explained by the current basis
        explained = np.sum(basis * basis, axis=1) if basis.shape[1] else np.zeros(m)
        cand = np.zeros(m)
        cand[int(np.argmin(explained))] = 1.0
        for _ in range(2):  # two Gram-Schmidt passes
            if basis.shape[1]:
                cand = cand - basis @ (basis.T @ cand)
        cand /= np.linalg.norm(cand)
        u[:, slot] = cand
        basis = np.hstack([basis, cand[:, None]])


def _gram_schmidt_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass modified Gram-Schmidt QR with completion of dependent columns.

    Returns (q, r) with ``a = q @ r`` and q's columns orthonormal; dependent
    columns of ``a`` yield a zero row in r and a deterministic filler in q.
    """
    m, n = a.shape
    q = np.zeros((m, n))
    r = np.zeros((n, n))
    for j in range(n):
        v = a[:, j].copy()
        scale = np.linalg.norm(v)
        for _ in range(2):
            if j:
                coef = q[:, :j].T @ v
                r[:j, j] += coef
                v = v - q[:, :j] @ coef
        norm = np.linalg.norm(v)
        if norm > scale * 1e-14 and norm > 0.0:
            q[:, j] = v / norm
            r[j, j] = norm
        else:
            explained = np.sum(q[:, :j] ** 2, axis=1) if j else np.zeros(m)
            v = np.zeros(m)
            v[int(np.argmin(explained))] = 1.0
            for _ in range(2):
                if j:
                    v = v - q[:, :j] @ (q[:, :j].T @ v)
            q[:, j] = v / np.linalg.norm(v)
    return q, r


def orthonormal_columns(a) -> np.ndarray:
    """Orthonormal basis for the columns of ``a`` (deterministic Gram-Schmidt)."""
    q, _ = _gram_schmidt_qr(as_matrix(a, "orthonormalization input"))
    return q


def svd_thin(a, *, tol: float = JACOBI_TOL,
             max_sweeps: int = JACOBI_MAX_SWEEPS) -> SvdResult:
    """Thin singular value decomposition of a dense real matrix.

    Raises EmptyMatrix for a matrix with no rows or columns and
    NumericalFailure if the Jacobi iteration exceeds its sweep budget.
    """
    m = as_matrix(a, "svd input")
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise EmptyMatrix(f"cannot decompose an empty {rows}x{cols} matrix")
    if rows < cols:
        flipped = svd_thin(m.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(left_vectors=flipped.right_vectors,
                         singular_values=flipped.singular_values,
                         right_vectors=flipped.left_vectors)

    if rows >= 2 * cols:
        # shrink tall problems before the quadratic-cost Jacobi phase
        q, r = _gram_schmidt_qr(m)
        inner = svd_thin(r, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(left_vectors=q @ inner.left_vectors,
                         singular_values=inner.singular_values,
                         right_vectors=inner.right_vectors)

    g = m.copy()
    v = np.eye(cols)
    _jacobi_orthogonalize(g, v, tol, max_sweeps)

    sigma = np.sqrt(np.einsum("ij,ij->j", g, g))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    g = g[:, order]
    v = v[:, order]

    u = np.zeros_like(g)
    # columns below the numerical-rank threshold are noise; rebuild them
    zero_tol = sigma.max(initial=0.0) * max(rows, cols) * np.finfo(np.float64).eps
    nonzero = sigma > zero_tol
    u[:, nonzero] = g[:, nonzero] / sigma[nonzero]
    zero_slots = np.nonzero(~nonzero)[0]
    if zero_slots.size:
        _fill_zero_columns(u, zero_slots)
    return SvdResult(left_vectors=u, singular_values=sigma, right_vectors=v)


def project_onto_basis(a, basis, *, tol: float = ORTHONORMALITY_TOL) -> np.ndarray:
    """Project the rows of ``a`` onto the span of the basis columns.

    Returns ``a @ basis @ basis.T``. The basis must have orthonormal columns
    within ``tol``; an empty basis (zero columns) projects everything to zero.
    """
    mat = as_matrix(a, "projection input")
    if basis is None:
        return np.zeros_like(mat)
    b = as_matrix(basis, "basis")
    if b.shape[0] != mat.shape[1]:
        raise DimensionMismatch(
            f"cannot project {mat.shape} rows onto basis of shape {b.shape}")
    if b.shape[1] == 0:
        return np.zeros_like(mat)
    require_orthonormal(b, tol)
    return (mat @ b) @ b.T
