"""The sign-flip pair: where pure orthogonal projection goes wrong.

Task 2 is task 1 with negated inputs under a shared classifier, so both
tasks span the same input subspace and the optimal second-task weights are
the negation of the first's. Orthogonal projection blocks almost the whole
gradient; the trust region instead reuses the frozen weights through a
learned scaling matrix (which ends up close to a sign flip) and trains the
second task to a low loss without touching the first.
"""

from trgp.selftest import sign_flip_comparison

res = sign_flip_comparison(seed=0)

print("fraction of the task-2 probe gradient surviving projection "
      f"(projection-only): {res['gpm']['residual_ratio']:.3f}")
print(f"final task-2 training loss, projection-only: {res['gpm']['task2_loss']:.4f}")
print(f"final task-2 training loss, trust region:    {res['trgp']['task2_loss']:.4f}")
ratio = res['trgp']['task2_loss'] / res['gpm']['task2_loss']
print(f"\ntrust region reaches {100 * ratio:.2f}% of the blocked loss "
      "(lower is better)")
