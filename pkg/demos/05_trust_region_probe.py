"""How the trust region decides which old tasks correlate with a new one.

Sweeps the subspace overlap between two synthetic tasks and reports the
fraction of the new task's probe-gradient norm that falls inside the old
task's input subspace at the first layer. The selection rule keeps old
tasks whose ratio clears the threshold, at most top-k of them.
"""

import numpy as np

from trgp import gen_split_synthetic, init_mlp, probe_gradient, projection_ratio, select_top_k
from trgp.benchmarks import subspace_store_for
from trgp.seeds import named_rng
from trgp.trainers import TrainerConfig, train_task_gpm

print(f"{'overlap':>8} {'ratio':>8}   selected with eps=0.5, k=2")
for overlap in (0.0, 0.25, 0.5, 0.75, 1.0):
    stream = gen_split_synthetic(2, 4, 32, 4.0, seed=0, overlap=overlap,
                                 samples_per_class=80, noise=0.5)
    cfg = TrainerConfig(epochs=4, batch_size=16, lr=0.05, eps_th=0.97,
                        rep_samples=160, seed=0)
    model = init_mlp([32, 20, 4], named_rng(0, "init"))
    store = subspace_store_for(model, [0, 1])
    t0 = stream.tasks[0].train
    train_task_gpm(model, store, t0.x, t0.y, cfg, task_index=0, root_seed=0)

    t1 = stream.tasks[1].train
    grads = probe_gradient(model, t1.x[:64], t1.y[:64])
    ratio = projection_ratio(grads[0], store.basis_for(0, 0).basis)
    sel = select_top_k({0: {0: ratio}}, epsilon_l=0.5, top_k=2, new_task_id=1)
    print(f"{overlap:>8.2f} {ratio:>8.3f}   {sel.tasks_for_layer(0) or 'none'}")
