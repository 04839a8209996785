"""How a task's input subspace is distilled from its representations.

Forward a batch through a small network, collect each layer's inputs as a
representation matrix, and watch the extracted rank grow with the energy
threshold. Also shows the later-task path reusing old directions.
"""

import numpy as np

from trgp import (
    RepresentationMatrix,
    collect_representations,
    extract_basis_first_task,
    extract_basis_later_task,
    init_mlp,
)
from trgp.seeds import named_rng

rng = np.random.default_rng(1)
model = init_mlp([16, 12, 4], named_rng(1, "init"))

# inputs concentrated near a 3-dimensional subspace plus small noise
frame = np.linalg.qr(rng.standard_normal((16, 3)))[0]
x = rng.standard_normal((200, 3)) @ frame.T + 0.05 * rng.standard_normal((200, 16))

reps = collect_representations(model, x)
print("representation matrices per layer:",
      [r.matrix.shape for r in reps])

r0 = reps[0]
for eps_th in (0.80, 0.95, 0.99, 0.999):
    lb = extract_basis_first_task(r0, eps_th)
    print(f"eps_th={eps_th:<6} rank={lb.rank}")

# a second task half inside the first task's subspace reuses its directions
old = extract_basis_first_task(r0, 0.95)
x2 = np.concatenate([
    rng.standard_normal((100, 2)) @ frame[:, :2].T,          # inside old span
    rng.standard_normal((100, 16)) * 0.8,                     # fresh directions
])
r2 = RepresentationMatrix(task_id=1, layer_id=0, matrix=x2.T)
lb2 = extract_basis_later_task(r2, [old], 0.95)
print("\nlater task: rank", lb2.rank,
      "reused", int(lb2.reused_flags.sum()), "of", lb2.rank, "directions")
