"""Shared fixtures: tiny streams and a minimal sequential-training driver."""

import numpy as np

from trgp import benchmarks, network, trainers
from trgp.seeds import named_rng

ACCEPTANCE_LOG = []


def record_acceptance(number: int, description: str, status: str, detail: str = ""):
    """Collect one line per acceptance criterion for the terminal summary."""
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_LOG.append((number, f"criterion {number:>2} {status:<4} {description}{suffix}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(line)


def synthetic_base(dim=32, classes=4, n_train=120, n_test=60, seed=0):
    """Gaussian class clusters usable as a base dataset for permuted streams."""
    rng = np.random.default_rng(seed)
    means = 3.0 * np.linalg.qr(rng.standard_normal((dim, classes)))[0].T

    def draw(n):
        xs, ys = [], []
        for c in range(classes):
            xs.append(means[c] + rng.standard_normal((n, dim)))
            ys.append(np.full(n, c, dtype=np.int64))
        return benchmarks.Split(np.concatenate(xs), np.concatenate(ys))

    return benchmarks.BaseDataset(train=draw(n_train), test=draw(n_test),
                                  num_classes=classes)


def ray_task(dim, coords, n_per_class, rng, lo=0.5, hi=2.0):
    """Classes on positive coordinate rays; every layer's representation of
    such data is exactly low-rank because ReLU is positively homogeneous."""
    xs, ys = [], []
    for c, coord in enumerate(coords):
        x = np.zeros((n_per_class, dim))
        x[:, coord] = rng.uniform(lo, hi, size=n_per_class)
        xs.append(x)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def train_sequential(stream, method, seed, widths, cfg_kwargs=None):
    """Run one method over a stream without touching the filesystem.

    Returns (matrix, model, store, artifacts_by_task).
    """
    kwargs = dict(epochs=5, batch_size=16, lr=0.05, eps_th=0.97,
                  rep_samples=200, seed=seed)
    kwargs.update(cfg_kwargs or {})
    cfg = trainers.TrainerConfig(method=method, **kwargs)
    model = network.init_mlp(widths, named_rng(seed, "init"))
    layer_ids = list(range(model.n_layers))
    store = benchmarks.subspace_store_for(model, layer_ids)
    arts = {}
    T = len(stream.tasks)
    matrix = np.full((T, T), np.nan)
    for t, task in enumerate(stream.tasks):
        tr = task.train
        if method == "sgd":
            _, art = trainers.train_task_sgd(model, tr.x, tr.y, cfg,
                                             task_index=t, root_seed=seed)
        elif method == "gpm":
            _, art = trainers.train_task_gpm(model, store, tr.x, tr.y, cfg,
                                             task_index=t, root_seed=seed)
        else:
            _, art = trainers.train_task_trgp(model, store, tr.x, tr.y, cfg,
                                              task_index=t, root_seed=seed)
        arts[t] = art
        for i in range(t + 1):
            te = stream.tasks[i].test
            matrix[t, i] = trainers.evaluate_accuracy(
                model, store if method != "sgd" else None, arts[i], te.x, te.y)
    return matrix, model, store, arts
