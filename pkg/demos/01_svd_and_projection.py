"""Dense linear-algebra primitives the whole engine is built on.

Runs the in-repo Jacobi SVD on a random matrix, checks the reconstruction,
and shows what projecting a matrix onto an orthonormal basis does to norms.
"""

import numpy as np

from trgp import frobenius_norm, project_onto_basis, svd_thin

rng = np.random.default_rng(0)

a = rng.standard_normal((8, 5))
res = svd_thin(a)
recon = res.left_vectors @ np.diag(res.singular_values) @ res.right_vectors.T

print("singular values:", np.round(res.singular_values, 4))
print("reconstruction error:", np.linalg.norm(recon - a) / np.linalg.norm(a))
print("energy identity |A|_F^2 = sum sigma^2:",
      frobenius_norm(a) ** 2, "vs", np.sum(res.singular_values ** 2))

# project rows of a random matrix onto the span of the top-2 left vectors
basis = res.left_vectors[:, :2]
m = rng.standard_normal((4, 8))
p = project_onto_basis(m, basis)

print("\nprojection onto a rank-2 subspace:")
print("  |M|_F      =", round(frobenius_norm(m), 4))
print("  |proj(M)|_F =", round(frobenius_norm(p), 4), "(never larger)")
print("  Pythagoras residual:",
      frobenius_norm(m) ** 2 - frobenius_norm(p) ** 2 - frobenius_norm(m - p) ** 2)
print("  idempotent:", np.allclose(project_onto_basis(p, basis), p))
