"""Task streams, metrics, and experiment orchestration.

Streams come in three kinds: pixel-permuted copies of a real image dataset
(loaded from IDX files), synthetic Gaussian class clusters with controllable
inter-task subspace overlap, and the two-task sign-flip pair where the second
task is the first with negated inputs. Accuracies land in a lower-triangular
matrix from which the final-average and backward-transfer metrics are read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import network, trainers
from .errors import (
    BadMagic,
    BwtUndefined,
    CountMismatch,
    EmptyBase,
    InvalidGeometry,
    TruncatedFile,
)
from .linalg import orthonormal_columns
from .seeds import named_rng

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
RESULTS_FORMAT_VERSION = 1


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class BaseDataset:
    train: Split
    test: Split
    num_classes: int


@dataclass
class Task:
    """One task of a stream; splits materialize lazily on access."""

    task_id: int
    name: str
    num_classes: int
    descriptor: dict
    _loader: Callable[[str], Split]

    @property
    def train(self) -> Split:
        return self._loader("train")

    @property
    def val(self) -> Split:
        return self._loader("val")

    @property
    def test(self) -> Split:
        return self._loader("test")


@dataclass
class TaskStream:
    kind: str
    input_dim: int
    tasks: list[Task]
    descriptor: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


def stream_fingerprint(stream: TaskStream) -> str:
    """SHA-256 over every split's bytes plus the descriptor; identical
    (generator, seed) pairs must produce identical fingerprints."""
    h = hashlib.sha256()
    h.update(json.dumps(stream.descriptor, sort_keys=True).encode())
    for task in stream.tasks:
        for split in (task.train, task.val, task.test):
            h.update(np.ascontiguousarray(split.x).tobytes())
            h.update(np.ascontiguousarray(split.y).tobytes())
    return h.hexdigest()


# -- IDX ingestion -----------------------------------------------------------

def _read_be_u32(buf: bytes, offset: int, path) -> int:
    if len(buf) < offset + 4:
        raise TruncatedFile(f"{path}: header ends before offset {offset + 4}")
    return struct.unpack(">I", buf[offset:offset + 4])[0]


def load_idx(images_path, labels_path) -> Split:
    """Parse a big-endian IDX image/label file pair into a flat float dataset.

    Pixels are scaled to [0, 1]; images flatten to rows of rows*cols floats.
    """
    img_buf = Path(images_path).read_bytes()
    magic = _read_be_u32(img_buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagic(f"{images_path}: magic {magic}, expected {IDX_IMAGE_MAGIC}")
    n = _read_be_u32(img_buf, 4, images_path)
    rows = _read_be_u32(img_buf, 8, images_path)
    cols = _read_be_u32(img_buf, 12, images_path)
    need = 16 + n * rows * cols
    if len(img_buf) < need:
        raise TruncatedFile(f"{images_path}: {len(img_buf)} bytes, need {need}")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    x = (pixels.astype(np.float64) / 255.0).reshape(n, rows * cols)

    lab_buf = Path(labels_path).read_bytes()
    magic = _read_be_u32(lab_buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise BadMagic(f"{labels_path}: magic {magic}, expected {IDX_LABEL_MAGIC}")
    n_lab = _read_be_u32(lab_buf, 4, labels_path)
    if len(lab_buf) < 8 + n_lab:
        raise TruncatedFile(f"{labels_path}: {len(lab_buf)} bytes, need {8 + n_lab}")
    if n_lab != n:
        raise CountMismatch(f"{n} images vs {n_lab} labels")
    y = np.frombuffer(lab_buf, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    return Split(x=x, y=y)


# -- stream generators ---------------------------------------------------------

def _val_split(split: Split, fraction: float, rng) -> tuple[Split, Split]:
    n = len(split)
    n_val = int(round(fraction * n))
    order = rng.permutation(n)
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    return (Split(split.x[train_idx], split.y[train_idx]),
            Split(split.x[val_idx], split.y[val_idx]))


def gen_permuted_stream(base: BaseDataset, num_tasks: int, seed: int, *,
                        val_fraction: float = 0.1,
                        train_limit: int | None = None) -> TaskStream:
    """num_tasks copies of the base dataset under fixed pixel permutations.

    Task 0 keeps the identity permutation; later permutations are drawn
    deterministically from the seed. Labels are untouched.
    """
    if len(base.train) == 0:
        raise EmptyBase("base dataset has no training samples")
    if num_tasks < 1:
        raise ValueError(f"num_tasks must be >= 1, got {num_tasks}")
    train = base.train
    if train_limit is not None and train_limit < len(train):
        keep = np.sort(named_rng(seed, "stream", "subset")
                       .choice(len(train), size=train_limit, replace=False))
        train = Split(train.x[keep], train.y[keep])
    train, val = _val_split(train, val_fraction, named_rng(seed, "stream", "valsplit"))
    dim = train.x.shape[1]

    splits = {"train": train, "val": val, "test": base.test}
    tasks = []
    for t in range(num_tasks):
        if t == 0:
            perm = np.arange(dim)
        else:
            perm = named_rng(seed, "stream", "permute", t).permutation(dim)

        def loader(name, perm=perm):
            s = splits[name]
            return Split(s.x[:, perm], s.y)

        tasks.append(Task(task_id=t, name=f"permuted-{t}",
                          num_classes=base.num_classes,
                          descriptor={"permutation_task": t, "seed": seed},
                          _loader=loader))
    return TaskStream(kind="permuted", input_dim=dim, tasks=tasks,
                      descriptor={"kind": "permuted", "num_tasks": num_tasks,
                                  "seed": seed, "train_limit": train_limit,
                                  "val_fraction": val_fraction})


def gen_split_synthetic(num_tasks: int, classes_per_task: int, dim: int,
                        separation: float, seed: int, *,
                        overlap: float = 0.0,
                        samples_per_class: int = 100,
                        val_per_class: int = 10,
                        test_per_class: int = 40,
                        subspace_dim: int | None = None,
                        noise: float = 1.0) -> TaskStream:
    """Gaussian class clusters living in per-task subspaces.

    ``overlap`` controls how many subspace directions tasks share: 1.0 gives
    identical subspaces (strongly correlated tasks), 0.0 gives mutually
    orthogonal ones. The class-to-direction assignment rotates by one step
    per task, so a fully overlapping later task reuses the same features but
    still has to re-map them to labels instead of arriving pre-solved.
    """
    if num_tasks < 1:
        raise ValueError(f"num_tasks must be >= 1, got {num_tasks}")
    sub = subspace_dim if subspace_dim is not None else classes_per_task
    if sub < classes_per_task:
        raise InvalidGeometry(
            f"subspace_dim {sub} cannot hold {classes_per_task} class directions")
    shared = int(round(overlap * sub))
    unique = sub - shared
    need = shared + num_tasks * unique
    if need > dim:
        raise InvalidGeometry(
            f"need {need} orthogonal directions but ambient dim is {dim}")
    frame = orthonormal_columns(
        named_rng(seed, "stream", "frame").standard_normal((dim, need)))

    tasks = []
    for t in range(num_tasks):
        cols = list(range(shared)) + \
            [shared + t * unique + i for i in range(unique)]
        dirs = frame[:, cols]  # dim x sub

        def sample(kind, n_per_class, t=t, dirs=dirs):
            rng = named_rng(seed, "stream", "draw", t, kind)
            xs, ys = [], []
            for c in range(classes_per_task):
                mean = separation * dirs[:, (c + t) % sub]
                coeff = noise * rng.standard_normal((sub, n_per_class))
                xs.append((mean[:, None] + dirs @ coeff).T)
                ys.append(np.full(n_per_class, c, dtype=np.int64))
            x, y = np.concatenate(xs), np.concatenate(ys)
            order = rng.permutation(len(x))
            return Split(x[order], y[order])

        counts = {"train": samples_per_class, "val": val_per_class,
                  "test": test_per_class}

        def loader(name, sample=sample, counts=counts):
            return sample(name, counts[name])

        tasks.append(Task(task_id=t, name=f"synthetic-{t}",
                          num_classes=classes_per_task,
                          descriptor={"task": t, "overlap": overlap},
                          _loader=loader))
    return TaskStream(kind="split_synthetic", input_dim=dim, tasks=tasks,
                      descriptor={"kind": "split_synthetic", "seed": seed,
                                  "num_tasks": num_tasks, "dim": dim,
                                  "classes_per_task": classes_per_task,
                                  "separation": separation, "overlap": overlap,
                                  "noise": noise,
                                  "samples_per_class": samples_per_class})


def gen_sign_flip_pair(dim: int, seed: int, *, n_train: int = 256,
                       n_val: int = 32, n_test: int = 128,
                       separation: float = 3.0, noise: float = 0.5) -> TaskStream:
    """Two tasks whose inputs differ only by sign, labels kept.

    Task 0 places class 0 at +mu and class 1 at -mu; task 1 negates every
    input, so its optimal shared-head weights are the negation of task 0's.
    """
    rng = named_rng(seed, "stream", "signflip")
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    mu = separation * direction

    def draw(n):
        half = n // 2
        x0 = mu + noise * rng.standard_normal((half, dim))
        x1 = -mu + noise * rng.standard_normal((n - half, dim))
        x = np.concatenate([x0, x1])
        y = np.concatenate([np.zeros(half, dtype=np.int64),
                            np.ones(n - half, dtype=np.int64)])
        order = rng.permutation(n)
        return Split(x[order], y[order])

    base = {"train": draw(n_train), "val": draw(n_val), "test": draw(n_test)}
    tasks = []
    for t, sign in enumerate((1.0, -1.0)):
        def loader(name, sign=sign):
            s = base[name]
            return Split(sign * s.x, s.y)

        tasks.append(Task(task_id=t, name=f"signflip-{t}", num_classes=2,
                          descriptor={"sign": sign}, _loader=loader))
    return TaskStream(kind="sign_flip_pair", input_dim=dim, tasks=tasks,
                      descriptor={"kind": "sign_flip_pair", "seed": seed,
                                  "dim": dim, "separation": separation,
                                  "noise": noise, "n_train": n_train})


# -- metrics --------------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float
    bwt: float | None
    forward: list[float] | None
    per_task_final: list[float]


def backward_transfer(matrix) -> float:
    """Mean drop of each finished task's accuracy at the end of the stream."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise BwtUndefined("backward transfer needs a square matrix with T >= 2")
    final = a[-1, :-1]
    diag = np.diag(a)[:-1]
    return float(np.mean(final - diag))


def compute_metrics(matrix) -> MetricsReport:
    """ACC, BWT and the per-task forward/final accuracy vectors.

    A square T x T lower-triangular matrix is the sequential protocol; a
    single-row matrix is the joint-training protocol, which only defines ACC.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"accuracy matrix must be 2-d and non-empty, got {a.shape}")
    lower = np.tril_indices(a.shape[0], m=a.shape[1])
    vals = a[lower]
    if np.isnan(vals).any() or (vals < 0).any() or (vals > 1).any():
        raise ValueError("accuracies at or below the diagonal must lie in [0, 1]")
    final = a[-1]
    acc = float(np.mean(final))
    if a.shape[0] == a.shape[1]:
        forward = [float(v) for v in np.diag(a)]
        bwt = None if a.shape[0] == 1 else backward_transfer(a)
    else:
        forward = None
        bwt = None
    return MetricsReport(acc=acc, bwt=bwt, forward=forward,
                         per_task_final=[float(v) for v in final])


# -- experiment orchestration ------------------------------------------------------

def _matrix_to_lists(a: np.ndarray):
    return [[None if np.isnan(v) else float(v) for v in row] for row in a]


def _write_matrix_csv(a: np.ndarray, path: Path) -> None:
    lines = [",".join("" if np.isnan(v) else f"{v:.6f}" for v in row) for row in a]
    path.write_text("\n".join(lines) + "\n")


def save_checkpoint(path, model: network.ModelState,
                    artifacts: trainers.TaskArtifacts | None = None) -> None:
    payload = {"format_version": np.array(1, dtype=np.int64),
               "n_layers": np.array(model.n_layers, dtype=np.int64)}
    for l, w in enumerate(model.layers):
        payload[f"w{l}"] = w
    if artifacts is not None:
        for (layer, old_task), q in artifacts.scalings.items():
            payload[f"q_l{layer}_t{old_task}"] = q
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path) as data:
        n = int(data["n_layers"])
        model = network.ModelState([data[f"w{l}"] for l in range(n)])
        scalings = {}
        for key in data.files:
            if key.startswith("q_l"):
                layer, old = key[3:].split("_t")
                scalings[(int(layer), int(old))] = data[key]
    return model, scalings


def run_experiment(run_cfg, stream: TaskStream | None = None):
    """Train the configured method over the stream and measure every task.

    After each task the model is evaluated on all finished tasks' test
    splits (each under its own stored scaling matrices) to fill one row of
    the accuracy matrix. Returns (matrix, report, out_dir) and persists
    results.json, acc_matrix.csv, selections.json, the subspace store and
    per-task checkpoints under the run's output directory.
    """
    from .config import build_stream, run_config_to_mapping  # local to avoid cycle

    cfg = run_cfg.trainer
    cfg.validate()
    if stream is None:
        stream = build_stream(run_cfg.stream, cfg.seed)
    out_dir = Path(run_cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)

    per_task_heads = cfg.head == "per-task"
    head_classes = max(t.num_classes for t in stream.tasks)
    widths = [stream.input_dim, *run_cfg.hidden, head_classes]
    model = network.init_mlp(widths, named_rng(cfg.seed, "init"))
    n_layers = model.n_layers
    projected = list(range(n_layers - 1 if per_task_heads else n_layers))
    store = subspace_store_for(model, projected)

    T = len(stream.tasks)
    artifacts_by_task: dict[int, trainers.TaskArtifacts] = {}
    heads: dict[int, np.ndarray] = {}
    selection_logs = []
    worst_drift = 0.0

    if cfg.method == "multitask":
        pairs = [(t.train.x, t.train.y) for t in stream.tasks]
        trainers.train_joint(model, pairs, cfg, root_seed=cfg.seed)
        matrix = np.full((1, T), np.nan)
        for i, task in enumerate(stream.tasks):
            test = task.test
            matrix[0, i] = trainers.evaluate_accuracy(model, None, None,
                                                      test.x, test.y)
        save_checkpoint(out_dir / "checkpoints" / "joint.npz", model)
    else:
        matrix = np.full((T, T), np.nan)
        for t, task in enumerate(stream.tasks):
            if per_task_heads:
                model.layers[-1] = network.init_mlp(
                    [widths[-2], head_classes], named_rng(cfg.seed, "head", t)).layers[0]
            train = task.train
            if cfg.method == "trgp":
                _, art = trainers.train_task_trgp(
                    model, store, train.x, train.y, cfg,
                    task_index=t, root_seed=cfg.seed, layer_ids=projected)
            elif cfg.method == "gpm":
                _, art = trainers.train_task_gpm(
                    model, store, train.x, train.y, cfg,
                    task_index=t, root_seed=cfg.seed, layer_ids=projected)
            else:  # sgd
                _, art = trainers.train_task_sgd(model, train.x, train.y, cfg,
                                                 task_index=t, root_seed=cfg.seed)
            if per_task_heads:
                art.head = model.layers[-1].copy()
                heads[t] = art.head
            artifacts_by_task[t] = art
            if art.selection is not None:
                selection_logs.append(art.selection.to_log())
            if cfg.method in ("trgp", "gpm"):
                worst_drift = max(worst_drift, trainers.frozen_projection_drift(
                    model, store, artifacts_by_task))
            for i in range(t + 1):
                test = stream.tasks[i].test
                matrix[t, i] = trainers.evaluate_accuracy(
                    model, store if cfg.method != "sgd" else None,
                    artifacts_by_task[i], test.x, test.y, head=heads.get(i))
            save_checkpoint(out_dir / "checkpoints" / f"task_{t}.npz", model, art)
        if cfg.method in ("trgp", "gpm"):
            store.save(out_dir / "store.npz")

    report = compute_metrics(matrix)
    results = {
        "format_version": RESULTS_FORMAT_VERSION,
        "method": cfg.method,
        "seed": cfg.seed,
        "config": run_config_to_mapping(run_cfg),
        "acc_matrix": _matrix_to_lists(matrix),
        "acc": report.acc,
        "bwt": report.bwt,
        "forward": report.forward,
        "per_task_final": report.per_task_final,
        "frozen_projection_drift": worst_drift,
    }
    (out_dir / "results.json").write_text(json.dumps(results, indent=2) + "\n")
    _write_matrix_csv(matrix, out_dir / "acc_matrix.csv")
    (out_dir / "selections.json").write_text(
        json.dumps(selection_logs, indent=2) + "\n")
    return matrix, report, out_dir


def subspace_store_for(model: network.ModelState, projected_layers):
    from .subspace import SubspaceStore

    widths = [model.layers[l].shape[1] for l in projected_layers]
    return SubspaceStore(widths)
