"""Run configuration: an INI file with sections, every key optional.

Precedence (lowest to highest): built-in defaults, the config file, ``--set
section.key=value`` flags on the command line. The fully resolved config is
written next to every output so a run can be reproduced from it alone.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass

import numpy as np

from . import seeding
from .accountant import DpParams, VarianceMode
from .attack import AttackConfig
from .data import Dataset, load_idx, make_synthetic, prepare_images, read_csv_dataset
from .exceptions import ConfigError
from .fed import FederationConfig
from .model import ClassifierConfig
from .reporting import SCHEMA_VERSION
from .statevec import MAX_QUBITS, NoiseConfig, PqcArchitecture


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _shots(text):
    if text is None:
        return None
    s = str(text).strip().lower()
    if s in ("inf", "infinite", "none", "exact"):
        return None
    return int(s)


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (section, key, RunConfig attribute, parser)
_SCHEMA = [
    ("run", "seed", "seed", int),
    ("run", "output_dir", "output_dir", str),
    ("run", "parallelism", "parallelism", int),
    ("circuit", "num_qubits", "num_qubits", int),
    ("circuit", "num_layers", "num_layers", int),
    ("circuit", "num_classes", "num_classes", int),
    ("noise", "shots", "shots", _shots),
    ("noise", "lambda", "lam", float),
    ("noise", "lambda_min", "lambda_min", float),
    ("training", "learning_rate", "learning_rate", float),
    ("training", "batch_size", "batch_size", int),
    ("training", "clip", "clip", float),
    ("training", "grad_bound", "grad_bound", float),
    ("training", "optimizer", "optimizer", str),
    ("training", "local_epochs", "local_epochs", int),
    ("training", "eval_with_shots", "eval_with_shots", _bool),
    ("federation", "num_clients", "num_clients", int),
    ("federation", "num_rounds", "num_rounds", int),
    ("federation", "partition", "partition", str),
    ("privacy", "delta_total", "delta_total", float),
    ("privacy", "variance_mode", "variance_mode", str),
    ("privacy", "local_dataset_size", "local_dataset_size", int),
    ("data", "source", "data_source", str),
    ("data", "train_images", "train_images", str),
    ("data", "train_labels", "train_labels", str),
    ("data", "test_images", "test_images", str),
    ("data", "test_labels", "test_labels", str),
    ("data", "train_csv", "train_csv", str),
    ("data", "test_csv", "test_csv", str),
    ("data", "subset_size", "subset_size", int),
    ("data", "test_subset_size", "test_subset_size", int),
    ("data", "synthetic_per_class", "synthetic_per_class", int),
    ("data", "synthetic_test_per_class", "synthetic_test_per_class", int),
    ("data", "synthetic_feature_dim", "synthetic_feature_dim", int),
    ("data", "synthetic_separation", "synthetic_separation", float),
    ("attack", "num_queries", "num_queries", int),
    ("attack", "eval_size", "attack_eval_size", int),
    ("attack", "substitute_qubits", "substitute_qubits", int),
    ("attack", "substitute_layers", "substitute_layers", int),
    ("attack", "substitute_epochs", "substitute_epochs", int),
    ("attack", "substitute_lr", "substitute_lr", float),
    ("attack", "substitute_batch_size", "substitute_batch_size", int),
    ("attack", "strengths", "strengths", _floats),
    ("attack", "dump_images", "dump_images", _bool),
    ("attack", "victims", "victims", str),
    ("sweep", "shots", "sweep_shots", _ints),
    ("sweep", "lambdas", "sweep_lambdas", _floats),
]
_BY_KEY = {(s, k): (a, p) for s, k, a, p in _SCHEMA}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = ""
    parallelism: int = 1
    num_qubits: int = 8
    num_layers: int = 3
    num_classes: int = 10
    shots: int | None = 60
    lam: float = 0.05
    lambda_min: float = 0.001
    learning_rate: float = 0.01
    batch_size: int = 64
    clip: float = 0.8
    grad_bound: float = 1.0
    optimizer: str = "sgd"
    local_epochs: int = 5
    eval_with_shots: bool = False
    num_clients: int = 10
    num_rounds: int = 50
    partition: str = "iid"
    delta_total: float = 1e-5
    variance_mode: str = "paper"
    local_dataset_size: int = 6000
    data_source: str = "synthetic"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    subset_size: int = 0
    test_subset_size: int = 0
    synthetic_per_class: int = 100
    synthetic_test_per_class: int = 50
    synthetic_feature_dim: int = 0
    synthetic_separation: float = 4.0
    num_queries: int = 1000
    attack_eval_size: int = 200
    substitute_qubits: int = 0
    substitute_layers: int = 0
    substitute_epochs: int = 10
    substitute_lr: float = 0.1
    substitute_batch_size: int = 16
    strengths: tuple = (0.12, 0.14, 0.16, 0.18, 0.20)
    dump_images: bool = False
    victims: str = ""
    sweep_shots: tuple = (30, 60, 100, 300, 1000)
    sweep_lambdas: tuple = (0.01, 0.05)

    def validate(self) -> "RunConfig":
        def need(cond, field, msg):
            if not cond:
                raise ConfigError(field, msg)

        need(1 <= self.num_qubits <= MAX_QUBITS, "circuit.num_qubits", f"must be in [1, {MAX_QUBITS}]")
        need(self.num_layers >= 1, "circuit.num_layers", "must be >= 1")
        need(2 <= self.num_classes <= 2 ** self.num_qubits, "circuit.num_classes", "must be in [2, 2**num_qubits]")
        need(self.shots is None or self.shots >= 1, "noise.shots", "must be a positive integer or 'inf'")
        need(0.0 <= self.lam <= 1.0, "noise.lambda", f"must be in [0, 1], got {self.lam!r}")
        need(0.0 <= self.lambda_min <= 1.0, "noise.lambda_min", "must be in [0, 1]")
        need(self.lam >= self.lambda_min, "noise.lambda", f"{self.lam!r} is below lambda_min={self.lambda_min!r}")
        need(self.learning_rate > 0, "training.learning_rate", "must be positive")
        need(self.batch_size >= 1, "training.batch_size", "must be >= 1")
        need(self.clip > 0, "training.clip", "must be positive")
        need(self.grad_bound > 0, "training.grad_bound", "must be positive")
        need(self.optimizer in ("sgd", "adam"), "training.optimizer", "must be 'sgd' or 'adam'")
        need(self.local_epochs >= 1, "training.local_epochs", "must be >= 1")
        need(self.num_clients >= 1, "federation.num_clients", "must be >= 1")
        need(self.num_rounds >= 1, "federation.num_rounds", "must be >= 1")
        need(self.partition in ("iid", "label_skew"), "federation.partition", "must be 'iid' or 'label_skew'")
        need(self.parallelism >= 1, "run.parallelism", "must be >= 1")
        need(0.0 < self.delta_total < 1.0, "privacy.delta_total", "must be in (0, 1)")
        need(self.variance_mode in [m.value for m in VarianceMode], "privacy.variance_mode",
             "must be 'paper' or 'derived'")
        need(self.local_dataset_size >= 1, "privacy.local_dataset_size", "must be >= 1")
        need(self.data_source in ("synthetic", "idx", "csv"), "data.source", "must be synthetic, idx or csv")
        if self.data_source == "idx":
            for key in ("train_images", "train_labels"):
                need(getattr(self, key), f"data.{key}", "required for source = idx")
        if self.data_source == "csv":
            need(self.train_csv, "data.train_csv", "required for source = csv")
        need(self.subset_size >= 0, "data.subset_size", "must be >= 0")
        need(self.synthetic_per_class >= 1, "data.synthetic_per_class", "must be >= 1")
        need(self.num_queries >= self.num_classes, "attack.num_queries", "must be >= num_classes")
        need(all(e >= 0 for e in self.strengths), "attack.strengths", "must be non-negative")
        need(self.attack_eval_size >= 1, "attack.eval_size", "must be >= 1")
        need(all(m >= 1 for m in self.sweep_shots), "sweep.shots", "must be positive integers")
        need(all(0.0 <= v <= 1.0 for v in self.sweep_lambdas), "sweep.lambdas", "must lie in [0, 1]")
        return self

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- derived configs ----------------------------------------------------

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            arch=PqcArchitecture(self.num_qubits, self.num_layers),
            num_classes=self.num_classes,
            noise=NoiseConfig(self.shots, self.lam, self.lambda_min),
            grad_clip=self.clip,
            learning_rate=self.learning_rate,
            grad_bound=self.grad_bound,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
        )

    def federation_config(self) -> FederationConfig:
        return FederationConfig(
            self.classifier_config(), num_clients=self.num_clients, num_rounds=self.num_rounds,
            local_epochs=self.local_epochs, master_seed=self.seed, parallelism=self.parallelism,
            partition=self.partition, delta_total=self.delta_total, variance_mode=self.variance_mode,
            eval_with_shots=self.eval_with_shots,
        )

    def dp_params(self, shots=None, lam=None) -> DpParams:
        shots = self.shots if shots is None else shots
        if shots is None:
            raise ConfigError("noise.shots", "privacy accounting needs a finite shot count")
        return DpParams.from_total_delta(
            self.delta_total, num_qubits=self.num_qubits, num_layers=self.num_layers, shots=shots,
            lam=self.lam if lam is None else lam, grad_bound=self.grad_bound, learning_rate=self.learning_rate,
            local_epochs=self.local_epochs, clip=self.clip, local_dataset_size=self.local_dataset_size,
            num_clients=self.num_clients, num_rounds=self.num_rounds, variance_mode=self.variance_mode,
        )

    def victim_list(self) -> list[tuple[str, str]]:
        """``[(checkpoint path, tag)]`` from ``path[:tag],path[:tag]``."""
        out = []
        for i, item in enumerate(v for v in self.victims.split(",") if v.strip()):
            path, _, tag = item.strip().partition(":")
            out.append((path, tag or f"victim{i}"))
        return out

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            num_queries=self.num_queries, num_classes=self.num_classes,
            substitute_qubits=self.substitute_qubits or self.num_qubits,
            substitute_layers=self.substitute_layers or self.num_layers,
            substitute_epochs=self.substitute_epochs, substitute_lr=self.substitute_lr,
            substitute_batch_size=self.substitute_batch_size, substitute_clip=self.clip,
            strengths=self.strengths, seed=self.seed,
        )

    # -- serialisation --------------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["meta"] = {"schema_version": SCHEMA_VERSION}
        for section, key, attr, _ in _SCHEMA:
            if not parser.has_section(section):
                parser.add_section(section)
            parser[section][key] = _render(getattr(self, attr))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue().rstrip("\n") + "\n"

    def to_dict(self) -> dict:
        out: dict = {}
        for section, key, attr, _ in _SCHEMA:
            value = getattr(self, attr)
            out.setdefault(section, {})[key] = list(value) if isinstance(value, tuple) else value
        return out


def _render(value) -> str:
    if value is None:
        return "inf"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _apply(values: dict, section: str, key: str, raw: str) -> None:
    if (section, key) not in _BY_KEY:
        raise ConfigError(f"{section}.{key}", "unknown setting")
    attr, parse = _BY_KEY[(section, key)]
    try:
        values[attr] = parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r}: {exc}") from None


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Build and validate a RunConfig from INI text and ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    values: dict = {}
    for section in parser.sections():
        if section == "meta":
            continue
        for key, raw in parser[section].items():
            _apply(values, section, key, raw)
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(name or item, "override must look like section.key=value")
        _apply(values, section, key, raw.strip())
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None
    return cfg.validate()


def load_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _subset(ds: Dataset, n: int, seed, stream: int) -> Dataset:
    if not n or n >= len(ds):
        return ds
    idx = np.sort(seeding.rng(seed, 7, stream).permutation(len(ds))[:n])
    return ds.subset(idx)


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset | None]:
    """Training and test sets as described by the ``[data]`` section."""
    if cfg.data_source == "synthetic":
        dim = cfg.synthetic_feature_dim or min(2 ** cfg.num_qubits, 256)
        if dim < cfg.num_classes or dim > 2 ** cfg.num_qubits:
            raise ConfigError("data.synthetic_feature_dim", f"must be in [num_classes, 2**num_qubits], got {dim}")
        train = make_synthetic(cfg.num_classes, cfg.synthetic_per_class, dim, cfg.synthetic_separation,
                               seeding.derive(cfg.seed, 7, 0))
        test = make_synthetic(cfg.num_classes, cfg.synthetic_test_per_class, dim, cfg.synthetic_separation,
                              seeding.derive(cfg.seed, 7, 1))
    elif cfg.data_source == "idx":
        train = prepare_images(*load_idx(cfg.train_images, cfg.train_labels), num_classes=cfg.num_classes)
        test = None
        if cfg.test_images:
            test = prepare_images(*load_idx(cfg.test_images, cfg.test_labels), num_classes=cfg.num_classes)
    else:
        train = read_csv_dataset(cfg.train_csv, cfg.num_classes)
        test = read_csv_dataset(cfg.test_csv, cfg.num_classes) if cfg.test_csv else None
    if train.feature_dim > 2 ** cfg.num_qubits:
        raise ConfigError("circuit.num_qubits", f"{train.feature_dim} features need more than {cfg.num_qubits} qubits")
    train = _subset(train, cfg.subset_size, cfg.seed, 0)
    if test is not None:
        test = _subset(test, cfg.test_subset_size, cfg.seed, 1)
    return train, test


def attack_datasets(cfg: RunConfig) -> tuple[np.ndarray, Dataset]:
    """Attacker query pool and held-out evaluation set.

    Synthetic runs draw fresh samples from the task distribution; file-backed
    runs split the test set (pool first, evaluation after).
    """
    if cfg.data_source == "synthetic":
        dim = cfg.synthetic_feature_dim or min(2 ** cfg.num_qubits, 256)
        per_class_pool = math.ceil(cfg.num_queries / cfg.num_classes)
        per_class_eval = math.ceil(cfg.attack_eval_size / cfg.num_classes)
        pool = make_synthetic(cfg.num_classes, per_class_pool, dim, cfg.synthetic_separation,
                              seeding.derive(cfg.seed, 7, 2))
        ev = make_synthetic(cfg.num_classes, per_class_eval, dim, cfg.synthetic_separation,
                            seeding.derive(cfg.seed, 7, 3))
        return pool.X[: cfg.num_queries], ev.subset(slice(0, cfg.attack_eval_size))
    _, test = load_datasets(cfg.replace(test_subset_size=0))
    if test is None:
        raise ConfigError("data.test_images", "attack needs a test set")
    order = seeding.rng(cfg.seed, 7, 4).permutation(len(test))
    pool = test.subset(order[: cfg.num_queries])
    ev = test.subset(order[cfg.num_queries: cfg.num_queries + cfg.attack_eval_size])
    if len(ev) == 0:
        raise ConfigError("attack.num_queries", "no test examples left for evaluation after the query pool")
    return pool.X, ev

