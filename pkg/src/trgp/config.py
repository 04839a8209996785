"""Run configuration: INI files, CLI overrides, and reproducible echoes.

Precedence is flags > config file > defaults. The mapping written into
results.json round-trips through ``run_config_from_mapping`` so every run can
be reproduced exactly from its own output.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import benchmarks
from .errors import ConfigInvalid
from .trainers import METHODS, TrainerConfig

CONFIG_VERSION = 1


@dataclass
class StreamConfig:
    kind: str = "split_synthetic"
    num_tasks: int = 3
    # permuted_mnist
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int | None = None
    # synthetic streams
    dim: int = 32
    classes_per_task: int = 4
    separation: float = 4.0
    overlap: float = 0.0
    samples_per_class: int = 100
    noise: float = 1.0

    def validate(self) -> None:
        kinds = ("permuted_mnist", "split_synthetic", "sign_flip_pair")
        if self.kind not in kinds:
            raise ConfigInvalid(f"stream.kind must be one of {kinds}, got {self.kind!r}")
        if self.num_tasks < 1:
            raise ConfigInvalid(f"stream.num_tasks must be >= 1, got {self.num_tasks}")
        if self.kind == "permuted_mnist":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(self, name)
                if path is None:
                    raise ConfigInvalid(f"stream.{name} is required for permuted_mnist")
                if not Path(path).exists():
                    raise ConfigInvalid(f"stream.{name}: no such file: {path}")


@dataclass
class RunConfig:
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    hidden: tuple = (100, 100)
    out_dir: str = "runs/run"
    methods: list = field(default_factory=list)  # comparison list for the CLI

    def validate(self) -> None:
        self.trainer.validate()
        self.stream.validate()
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigInvalid(f"network.hidden must be positive widths, got {self.hidden}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigInvalid(f"run.methods contains unknown method {m!r}")


def build_stream(scfg: StreamConfig, seed: int) -> benchmarks.TaskStream:
    """Materialize the stream a config describes, seeded from the root seed."""
    scfg.validate()
    if scfg.kind == "permuted_mnist":
        train = benchmarks.load_idx(scfg.train_images, scfg.train_labels)
        test = benchmarks.load_idx(scfg.test_images, scfg.test_labels)
        base = benchmarks.BaseDataset(train=train, test=test, num_classes=10)
        return benchmarks.gen_permuted_stream(base, scfg.num_tasks, seed,
                                              train_limit=scfg.train_limit)
    if scfg.kind == "split_synthetic":
        return benchmarks.gen_split_synthetic(
            scfg.num_tasks, scfg.classes_per_task, scfg.dim, scfg.separation,
            seed, overlap=scfg.overlap, samples_per_class=scfg.samples_per_class,
            noise=scfg.noise)
    return benchmarks.gen_sign_flip_pair(scfg.dim, seed,
                                         separation=scfg.separation,
                                         noise=scfg.noise)


# -- parsing -------------------------------------------------------------------

_TRAINER_FIELDS = {
    "method": str, "epochs": int, "batch_size": int, "lr": float,
    "q_lr": float, "epsilon_l": float, "top_k": int, "eps_th": float,
    "probe_batch": int, "rep_samples": int, "head": str, "trust": str,
    "seed": int,
}
_STREAM_FIELDS = {
    "kind": str, "num_tasks": int, "train_images": str, "train_labels": str,
    "test_images": str, "test_labels": str, "train_limit": int, "dim": int,
    "classes_per_task": int, "separation": float, "overlap": float,
    "samples_per_class": int, "noise": float,
}


def _convert(section: str, key: str, raw, typ):
    if raw is None or raw == "":
        return None
    try:
        return typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{section}.{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def load_config_file(path) -> dict:
    """Read the INI config into {section: {key: raw string}}."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from exc
    mapping = {s: dict(parser.items(s)) for s in parser.sections()}
    version = mapping.get("run", {}).get("version")
    if version is not None and int(version) != CONFIG_VERSION:
        raise ConfigInvalid(f"run.version: unsupported config version {version}")
    return mapping


def build_run_config(file_map: dict | None = None,
                     overrides: dict | None = None) -> RunConfig:
    """Merge defaults, config-file values and CLI overrides into a RunConfig."""
    file_map = file_map or {}
    overrides = overrides or {}
    trainer = TrainerConfig()
    stream = StreamConfig()

    for key, raw in file_map.get("trainer", {}).items():
        if key not in _TRAINER_FIELDS:
            raise ConfigInvalid(f"trainer.{key}: unknown option")
        setattr(trainer, key, _convert("trainer", key, raw, _TRAINER_FIELDS[key]))
    for key, raw in file_map.get("stream", {}).items():
        if key not in _STREAM_FIELDS:
            raise ConfigInvalid(f"stream.{key}: unknown option")
        setattr(stream, key, _convert("stream", key, raw, _STREAM_FIELDS[key]))

    run_section = file_map.get("run", {})
    out_dir = run_section.get("out_dir", "runs/run")
    methods = [m.strip() for m in run_section.get("methods", "").split(",") if m.strip()]
    hidden_raw = file_map.get("network", {}).get("hidden", "100,100")
    try:
        hidden = tuple(int(h) for h in str(hidden_raw).split(",") if str(h).strip())
    except ValueError as exc:
        raise ConfigInvalid(f"network.hidden: cannot parse {hidden_raw!r}") from exc

    # flag overrides
    flag_to_field = {
        "seed": ("trainer", "seed", int),
        "method": ("trainer", "method", str),
        "epochs": ("trainer", "epochs", int),
        "batch": ("trainer", "batch_size", int),
        "lr": ("trainer", "lr", float),
        "epsilon_l": ("trainer", "epsilon_l", float),
        "top_k": ("trainer", "top_k", int),
        "eps_th": ("trainer", "eps_th", float),
        "head": ("trainer", "head", str),
        "trust": ("trainer", "trust", str),
        "tasks": ("stream", "num_tasks", int),
    }
    for flag, value in overrides.items():
        if value is None:
            continue
        if flag == "out":
            out_dir = str(value)
            continue
        if flag == "hidden":
            hidden = tuple(int(h) for h in str(value).split(","))
            continue
        if flag not in flag_to_field:
            raise ConfigInvalid(f"unknown override {flag!r}")
        target, name, typ = flag_to_field[flag]
        obj = trainer if target == "trainer" else stream
        setattr(obj, name, _convert(target, name, value, typ))

    rc = RunConfig(trainer=trainer, stream=stream, hidden=hidden,
                   out_dir=out_dir, methods=methods or [trainer.method])
    rc.validate()
    return rc


def run_config_to_mapping(rc: RunConfig) -> dict:
    """JSON-ready echo from which the run can be reproduced exactly."""
    trainer = asdict(rc.trainer)
    if isinstance(trainer["eps_th"], tuple):
        trainer["eps_th"] = list(trainer["eps_th"])
    return {
        "version": CONFIG_VERSION,
        "trainer": trainer,
        "stream": asdict(rc.stream),
        "network": {"hidden": list(rc.hidden)},
        "run": {"out_dir": rc.out_dir, "methods": list(rc.methods)},
    }


def run_config_from_mapping(mapping: dict) -> RunConfig:
    try:
        trainer_kwargs = dict(mapping["trainer"])
        if isinstance(trainer_kwargs.get("eps_th"), list):
            trainer_kwargs["eps_th"] = tuple(trainer_kwargs["eps_th"])
        rc = RunConfig(
            trainer=TrainerConfig(**trainer_kwargs),
            stream=StreamConfig(**mapping["stream"]),
            hidden=tuple(mapping["network"]["hidden"]),
            out_dir=mapping["run"]["out_dir"],
            methods=list(mapping["run"]["methods"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"config mapping is missing fields: {exc}") from exc
    rc.validate()
    return rc
