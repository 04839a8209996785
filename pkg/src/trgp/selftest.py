"""Fast invariant suite behind the ``selftest`` command.

Each property is a pure function returning (passed, detail). The suite is
deliberately small enough to finish well under a minute on a laptop: it
covers the numerical core (SVD, projections, gradients), the stored-basis
orthonormality contract, and the two canonical two-task scenarios where
projection-only training must stall (sign flip) or sail through untouched
(orthogonal subspaces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import benchmarks, linalg, network, trainers, trust_region
from .seeds import named_rng


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _svd_reconstruction() -> tuple[bool, str]:
    worst_rel, worst_orth = 0.0, 0.0
    for seed, shape in enumerate([(12, 7), (7, 12), (9, 9), (20, 4)]):
        a = np.random.default_rng(seed).standard_normal(shape)
        res = linalg.svd_thin(a)
        recon = res.left_vectors @ np.diag(res.singular_values) @ res.right_vectors.T
        worst_rel = max(worst_rel, np.linalg.norm(recon - a) / np.linalg.norm(a))
        worst_orth = max(worst_orth, linalg.orthonormality_error(res.left_vectors))
    ok = worst_rel <= 1e-6 and worst_orth <= 1e-6
    return ok, f"reconstruction {worst_rel:.2e}, orthonormality {worst_orth:.2e}"


def _projection_geometry() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(4):
        a = rng.standard_normal((6, 8))
        b = linalg.orthonormal_columns(rng.standard_normal((8, 3)))
        p = linalg.project_onto_basis(a, b)
        idem = np.max(np.abs(linalg.project_onto_basis(p, b) - p))
        na, npr, nr = (linalg.frobenius_norm(v) for v in (a, p, a - p))
        pyth = abs(na ** 2 - npr ** 2 - nr ** 2) / na ** 2
        contract = max(0.0, npr - na)
        worst = max(worst, idem, pyth, contract)
    return worst <= 1e-6, f"worst deviation {worst:.2e}"


def _gradient_check() -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    model = network.init_mlp([6, 5, 4], rng)
    k = 2
    q_basis = linalg.orthonormal_columns(rng.standard_normal((6, k)))
    sel = {0: [network.ScaledProjection(0, q_basis,
                                        np.eye(k) + 0.2 * rng.standard_normal((k, k)))]}
    x = rng.standard_normal((8, 6))
    y = rng.integers(0, 4, size=8)
    trace = network.forward_with_trace(model, sel, x, y)
    grads = network.backward(trace, model, sel)

    def loss():
        return network.forward_with_trace(model, sel, x, y).loss

    h, worst = 1e-5, 0.0
    for _ in range(60):
        if rng.random() < 0.4:
            target = sel[0][0].q
            analytic_mat = grads.scalings[(0, 0)]
        else:
            layer = int(rng.integers(2))
            target = model.layers[layer]
            analytic_mat = grads.weights[layer]
        i, j = (int(rng.integers(s)) for s in target.shape)
        orig = target[i, j]
        target[i, j] = orig + h
        up = loss()
        target[i, j] = orig - h
        down = loss()
        target[i, j] = orig
        fd = (up - down) / (2 * h)
        a = analytic_mat[i, j]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst <= 1e-4, f"worst relative error {worst:.2e}"


def _basis_orthonormality(inject: str) -> tuple[bool, str]:
    stream = benchmarks.gen_split_synthetic(2, 3, 16, 4.0, seed=3,
                                            overlap=0.5, samples_per_class=60)
    cfg = trainers.TrainerConfig(method="gpm", epochs=2, batch_size=16, lr=0.05,
                                 eps_th=0.97, rep_samples=120, seed=3)
    model = network.init_mlp([16, 12, 3], named_rng(3, "init"))
    store = benchmarks.subspace_store_for(model, [0, 1])
    for t, task in enumerate(stream.tasks):
        tr = task.train
        trainers.train_task_gpm(model, store, tr.x, tr.y, cfg,
                                task_index=t, root_seed=3)
    if inject == "nonorthonormal-basis":
        store.bases[(0, 0)].basis[:, 0] *= 1.5  # test hook: corrupt one column
    worst = max(linalg.orthonormality_error(lb.basis) for lb in store.bases.values())
    worst = max(worst, max(linalg.orthonormality_error(store.merged[l].basis)
                           for l in range(2)))
    return worst <= 1e-6, f"worst Gram deviation {worst:.2e}"


def sign_flip_comparison(seed: int = 0, *, epochs: int = 25, lr: float = 0.1,
                         eps_th: float = 0.99, hidden=(16,)) -> dict:
    """Train the two-task sign-flip pair with gpm and trgp from one init.

    Returns per-method dicts with the final second-task training loss and,
    for gpm, the fraction of the probe-gradient norm that survives the
    orthogonal projection at the start of the second task.
    """
    stream = benchmarks.gen_sign_flip_pair(2, seed, n_train=256,
                                           separation=3.0, noise=0.5)
    out = {}
    for method in ("gpm", "trgp"):
        cfg = trainers.TrainerConfig(method=method, epochs=epochs, batch_size=16,
                                     lr=lr, eps_th=eps_th, epsilon_l=0.5, top_k=2,
                                     rep_samples=256, probe_batch=64, seed=seed)
        model = network.init_mlp([2, *hidden, 2], named_rng(seed, "init"))
        layer_ids = list(range(model.n_layers))
        store = benchmarks.subspace_store_for(model, layer_ids)
        t0 = stream.tasks[0].train
        train_fn = trainers.train_task_trgp if method == "trgp" else trainers.train_task_gpm
        train_fn(model, store, t0.x, t0.y, cfg, task_index=0, root_seed=seed)

        t1 = stream.tasks[1].train
        probe = named_rng(seed, "probe", 1).choice(len(t1.x), size=64, replace=False)
        grads = trust_region.probe_gradient(model, t1.x[probe], t1.y[probe])
        blocked_num = blocked_den = 0.0
        for l in layer_ids:
            g = grads[l]
            residual = network.project_gradient(g, store.merged_matrix(l))
            blocked_num += float(np.sum(residual ** 2))
            blocked_den += float(np.sum(g ** 2))
        residual_ratio = float(np.sqrt(blocked_num / blocked_den))

        _, art = train_fn(model, store, t1.x, t1.y, cfg, task_index=1, root_seed=seed)
        out[method] = {"task2_loss": art.final_train_loss,
                       "residual_ratio": residual_ratio}
    return out


def _sign_flip_rescue() -> tuple[bool, str]:
    res = sign_flip_comparison(seed=0)
    ratio = res["gpm"]["residual_ratio"]
    gpm_loss = res["gpm"]["task2_loss"]
    trgp_loss = res["trgp"]["task2_loss"]
    ok = ratio <= 0.2 and trgp_loss <= 0.9 * gpm_loss
    return ok, (f"gpm residual ratio {ratio:.3f}, "
                f"losses gpm {gpm_loss:.4f} vs trgp {trgp_loss:.4f}")


def orthogonal_tasks_residual(seed: int = 4) -> float:
    """Input-layer projection leak between two coordinate-disjoint tasks.

    Task 0 lives in coordinates 0..2 of a 12-dim space, task 1 in 5..7;
    with exactly orthogonal input subspaces the projected gradient equals
    the raw gradient and the returned residual is zero.
    """
    rng = named_rng(seed, "ortho-demo")
    dim, per_class = 12, 60

    def embedded_task(coords):
        means = np.zeros((2, dim))
        means[0, coords[0]] = 3.0
        means[1, coords[1]] = -3.0
        xs, ys = [], []
        for c in range(2):
            x = np.zeros((per_class, dim))
            x[:, coords] = rng.standard_normal((per_class, len(coords)))
            xs.append(x + means[c])
            ys.append(np.full(per_class, c, dtype=np.intp))
        return np.concatenate(xs), np.concatenate(ys)

    x0, y0 = embedded_task([0, 1, 2])
    x1, y1 = embedded_task([5, 6, 7])
    cfg = trainers.TrainerConfig(method="gpm", epochs=4, batch_size=16, lr=0.05,
                                 eps_th=0.99, rep_samples=120, seed=seed)
    model = network.init_mlp([dim, 10, 2], named_rng(seed, "init"))
    store = benchmarks.subspace_store_for(model, [0, 1])
    trainers.train_task_gpm(model, store, x0, y0, cfg, task_index=0, root_seed=seed)
    grads = trust_region.probe_gradient(model, x1, y1)
    g = grads[0]
    projected = network.project_gradient(g, store.merged_matrix(0))
    return float(np.linalg.norm(projected - g))


def _orthogonal_tasks() -> tuple[bool, str]:
    resid = orthogonal_tasks_residual()
    return resid <= 1e-8, f"projection leak {resid:.2e}"


def run_selftest(inject: str = "none") -> list[PropertyResult]:
    checks = [
        ("svd-reconstruction", _svd_reconstruction),
        ("projection-geometry", _projection_geometry),
        ("gradient-check", _gradient_check),
        ("basis-orthonormality", lambda: _basis_orthonormality(inject)),
        ("sign-flip-rescue", _sign_flip_rescue),
        ("orthogonal-tasks", _orthogonal_tasks),
    ]
    results = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(PropertyResult(name=name, passed=passed, detail=detail))
    return results
