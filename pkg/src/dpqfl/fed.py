"""Federated training loop: partition, local descent, FedAvg, round metrics."""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import accountant, seeding
from .data import Dataset
from .exceptions import CheckpointMismatchError, EmptyListError, ShapeMismatchError, TooFewExamplesError
from .model import Adam, ClassifierConfig, check_n_features, evaluate, local_epoch, predict_masses
from .reporting import write_csv
from .statevec import LAMBDA_MIN, NoiseConfig, PqcArchitecture

METRICS_COLUMNS = ("round", "client", "train_loss", "train_acc", "test_loss", "test_acc")
CHECKPOINT_MAGIC = "# dpqfl-checkpoint 1"

# top-level seed streams
_INIT, _TRAIN, _PARTITION, _EVAL = 0, 1, 2, 3


@dataclass(frozen=True)
class FederationConfig:
    classifier: ClassifierConfig
    num_clients: int = 10
    num_rounds: int = 50
    local_epochs: int = 5
    master_seed: int = 0
    parallelism: int = 1
    partition: str = "iid"
    delta_total: float = 1e-5
    variance_mode: str = "paper"
    eval_with_shots: bool = False

    def __post_init__(self):
        for name in ("num_clients", "num_rounds", "local_epochs", "parallelism"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.partition not in ("iid", "label_skew"):
            raise ValueError(f"partition must be 'iid' or 'label_skew', got {self.partition!r}")
        accountant.VarianceMode(self.variance_mode)


@dataclass
class ClientMetrics:
    client: int
    train_loss: float
    train_acc: float


@dataclass
class RoundMetrics:
    round: int
    clients: list[ClientMetrics]
    train_loss: float
    train_acc: float
    test_loss: float | None = None
    test_acc: float | None = None
    wall_time: float = 0.0


@dataclass
class TrainResult:
    params: np.ndarray
    history: list[RoundMetrics]
    budget: accountant.DpBudget | None
    dp_params: accountant.DpParams | None
    notes: list[str] = field(default_factory=list)


def partition(n_examples: int, num_clients: int, strategy: str = "iid", seed=None, labels=None) -> list[np.ndarray]:
    """Disjoint index shards covering ``range(n_examples)``.

    ``iid`` shuffles then splits evenly, the first ``n % N`` shards taking one
    extra example. ``label_skew`` sorts the shuffled indices by label before
    splitting, so each client sees few classes.
    """
    if n_examples < num_clients:
        raise TooFewExamplesError(f"{n_examples} examples cannot cover {num_clients} clients")
    order = seeding.rng(seed, _PARTITION).permutation(n_examples)
    if strategy == "label_skew":
        if labels is None:
            raise ValueError("label_skew partition needs labels")
        order = order[np.argsort(np.asarray(labels)[order], kind="stable")]
    elif strategy != "iid":
        raise ValueError(f"unknown partition strategy {strategy!r}")
    base, extra = divmod(n_examples, num_clients)
    sizes = [base + (1 if i < extra else 0) for i in range(num_clients)]
    return np.split(order, np.cumsum(sizes)[:-1])


def aggregate(client_params) -> np.ndarray:
    """Elementwise mean of client parameter tensors.

    Each entry is the correctly rounded mean of the exact sum, so the result
    does not depend on client order and identical inputs come back unchanged.
    """
    client_params = [np.asarray(p, dtype=float) for p in client_params]
    if not client_params:
        raise EmptyListError("no client parameters to aggregate")
    shape = client_params[0].shape
    for p in client_params:
        if p.shape != shape:
            raise ShapeMismatchError(f"client params shape {p.shape} differs from {shape}")
    columns = np.stack([p.reshape(-1) for p in client_params], axis=1).tolist()
    return np.array([statistics.mean(col) for col in columns], dtype=float).reshape(shape)


def dp_params_for(cfg: FederationConfig, local_dataset_size: int) -> accountant.DpParams | None:
    """Accountant inputs matching a training configuration (None for exact shots)."""
    clf = cfg.classifier
    if clf.noise.shots is None:
        return None
    return accountant.DpParams.from_total_delta(
        cfg.delta_total,
        num_qubits=clf.arch.num_qubits,
        num_layers=clf.arch.num_layers,
        shots=clf.noise.shots,
        lam=clf.noise.per_gate_lambda,
        grad_bound=clf.grad_bound,
        learning_rate=clf.learning_rate,
        local_epochs=cfg.local_epochs,
        clip=clf.grad_clip,
        local_dataset_size=local_dataset_size,
        num_clients=cfg.num_clients,
        num_rounds=cfg.num_rounds,
        variance_mode=cfg.variance_mode,
    )


def _eval_cfg(cfg: FederationConfig) -> ClassifierConfig:
    return cfg.classifier if cfg.eval_with_shots else cfg.classifier.exact()


def client_update(global_params, shard: Dataset, cfg: FederationConfig, round_index: int, client: int):
    """K local epochs from the global model; ``client`` selects the seed stream."""
    params = global_params.copy()
    opt = Adam(cfg.classifier.learning_rate) if cfg.classifier.optimizer == "adam" else None
    for k in range(cfg.local_epochs):
        seed = seeding.derive(cfg.master_seed, _TRAIN, round_index, client, k)
        params = local_epoch(shard.X, shard.y, params, cfg.classifier, seed, opt)
    eval_seed = seeding.derive(cfg.master_seed, _EVAL, round_index, client)
    loss, acc = evaluate(shard.X, shard.y, params, _eval_cfg(cfg), eval_seed)
    return params, ClientMetrics(client, loss, acc)


def run_round(global_params, shards: list[Dataset], cfg: FederationConfig, round_index: int,
              test: Dataset | None = None, executor=None):
    """One communication round. Any client failure aborts the round."""
    start = time.perf_counter()
    args = [(global_params, shard, cfg, round_index, n) for n, shard in enumerate(shards)]
    if executor is None:
        results = [client_update(*a) for a in args]
    else:
        results = [f.result() for f in [executor.submit(client_update, *a) for a in args]]
    new_params = aggregate([r[0] for r in results])

    ecfg = _eval_cfg(cfg)
    X = np.concatenate([s.X for s in shards])
    y = np.concatenate([s.y for s in shards])
    train_loss, train_acc = evaluate(X, y, new_params, ecfg, seeding.derive(cfg.master_seed, _EVAL, round_index, 10 ** 6))
    metrics = RoundMetrics(round_index, [r[1] for r in results], train_loss, train_acc)
    if test is not None:
        metrics.test_loss, metrics.test_acc = evaluate(
            test.X, test.y, new_params, ecfg, seeding.derive(cfg.master_seed, _EVAL, round_index, 10 ** 6 + 1))
    metrics.wall_time = time.perf_counter() - start
    return new_params, metrics


def train(cfg: FederationConfig, dataset: Dataset, test: Dataset | None = None, init_params=None,
          callback=None) -> TrainResult:
    """Run ``num_rounds`` of federated training and attach the privacy budget."""
    arch = cfg.classifier.arch
    if dataset.feature_dim > 2 ** arch.num_qubits:
        raise ShapeMismatchError(f"{dataset.feature_dim} features exceed 2**{arch.num_qubits} amplitudes")
    if dataset.num_classes > cfg.classifier.num_classes:
        raise ValueError(f"dataset has {dataset.num_classes} classes, classifier {cfg.classifier.num_classes}")
    shards = [dataset.subset(idx) for idx in
              partition(len(dataset), cfg.num_clients, cfg.partition, cfg.master_seed, dataset.y)]

    dp = dp_params_for(cfg, min(len(s) for s in shards))
    notes = []
    budget = None
    if dp is None:
        notes.append("exact expectations (no shot noise): no finite epsilon can be certified")
    else:
        budget = accountant.compose(dp) if dp.lam > 0 else None
        if budget is None:
            notes.append("zero depolarizing noise: no finite epsilon can be certified")
    if cfg.classifier.optimizer == "adam":
        notes.append("adam optimizer is not covered by the privacy accountant")

    params = arch.init_params(seeding.rng(cfg.master_seed, _INIT)) if init_params is None else \
        arch.check_params(init_params).copy()
    history = []
    executor = ThreadPoolExecutor(cfg.parallelism) if cfg.parallelism > 1 else None
    try:
        for t in range(cfg.num_rounds):
            params, metrics = run_round(params, shards, cfg, t, test, executor)
            history.append(metrics)
            if callback is not None:
                callback(metrics)
    finally:
        if executor is not None:
            executor.shutdown()
    return TrainResult(params, history, budget, dp, notes)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def metrics_rows(history: list[RoundMetrics]) -> list[list]:
    rows = []
    for m in history:
        for c in m.clients:
            rows.append([m.round, c.client, c.train_loss, c.train_acc, None, None])
        rows.append([m.round, -1, m.train_loss, m.train_acc, m.test_loss, m.test_acc])
    return rows


def write_metrics_csv(path, history: list[RoundMetrics]) -> Path:
    return write_csv(path, METRICS_COLUMNS, metrics_rows(history))


def save_checkpoint(path, params, num_classes: int, round_index: int, config_text: str | None = None) -> Path:
    """Text tensor dump: ``#`` header lines, then one value per line in
    (layer, qubit, axis) order."""
    params = np.asarray(params, dtype=float)
    num_layers, num_qubits, _ = params.shape
    lines = [CHECKPOINT_MAGIC, f"# num_qubits={num_qubits}", f"# num_layers={num_layers}",
             f"# num_classes={num_classes}", f"# round={round_index}"]
    if config_text:
        lines += [f"#| {line}" for line in config_text.splitlines()]
    lines += [repr(float(v)) for v in params.reshape(-1)]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path):
    """Returns ``(params, header)`` where header has num_qubits, num_layers,
    num_classes, round and the embedded config text (possibly empty)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CHECKPOINT_MAGIC:
        raise CheckpointMismatchError(f"{path}: not a checkpoint file")
    header, config, values = {}, [], []
    for line in text[1:]:
        if line.startswith("#|"):
            config.append(line[3:])
        elif line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = int(value)
        elif line.strip():
            values.append(float(line))
    try:
        shape = (header["num_layers"], header["num_qubits"], 3)
    except KeyError as exc:
        raise CheckpointMismatchError(f"{path}: header lacks {exc}") from None
    if len(values) != shape[0] * shape[1] * 3:
        raise CheckpointMismatchError(f"{path}: {len(values)} values for shape {shape}")
    header["config"] = "\n".join(config)
    return np.array(values).reshape(shape), header


class FederatedQuantumClassifier(ClassifierMixin, BaseEstimator):
    """Federated amplitude-encoded circuit classifier with noise-derived DP.

    ``fit`` splits the training set across ``n_clients`` simulated clients and
    runs ``n_rounds`` of local clipped parameter-shift descent plus FedAvg.

    Attributes
    ----------
    classes_ : ndarray
    params_ : ndarray of shape (n_layers, n_qubits, 3)
    history_ : list of RoundMetrics
    budget_ : DpBudget or None
        None when the noise cannot certify a finite epsilon.
    config_ : FederationConfig
    """

    def __init__(self, n_qubits=8, n_layers=3, n_classes=None, shots=None, depolarizing=LAMBDA_MIN,
                 lambda_min=LAMBDA_MIN, n_clients=10, n_rounds=50, local_epochs=5, batch_size=64,
                 learning_rate=0.01, grad_clip=0.8, grad_bound=1.0, optimizer="sgd", partition="iid",
                 delta_total=1e-5, variance_mode="paper", parallelism=1, random_state=None):
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.n_classes = n_classes
        self.shots = shots
        self.depolarizing = depolarizing
        self.lambda_min = lambda_min
        self.n_clients = n_clients
        self.n_rounds = n_rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.grad_bound = grad_bound
        self.optimizer = optimizer
        self.partition = partition
        self.delta_total = delta_total
        self.variance_mode = variance_mode
        self.parallelism = parallelism
        self.random_state = random_state

    def _make_config(self, n_classes):
        clf = ClassifierConfig(
            arch=PqcArchitecture(self.n_qubits, self.n_layers),
            num_classes=n_classes,
            noise=NoiseConfig(self.shots, self.depolarizing, self.lambda_min),
            grad_clip=self.grad_clip,
            learning_rate=self.learning_rate,
            grad_bound=self.grad_bound,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
        )
        return FederationConfig(
            clf, num_clients=self.n_clients, num_rounds=self.n_rounds, local_epochs=self.local_epochs,
            master_seed=seeding.resolve_master_seed(self.random_state), parallelism=self.parallelism,
            partition=self.partition, delta_total=self.delta_total, variance_mode=self.variance_mode,
        )

    def fit(self, X, y, X_test=None, y_test=None):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        if X.min() < 0 or X.max() > 1:
            raise ValueError("features must be scaled to [0, 1]")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = self.n_classes or max(len(self.classes_), 2)
        self.config_ = self._make_config(n_classes)
        test = None
        if X_test is not None:
            X_test, y_test = check_X_y(X_test, y_test)
            test = Dataset(X_test, np.searchsorted(self.classes_, y_test), n_classes)
        result = train(self.config_, Dataset(X, y_idx, n_classes), test)
        self.params_ = result.params
        self.history_ = result.history
        self.budget_ = result.budget
        self.dp_params_ = result.dp_params
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_n_features(self, check_array(X))
        proba = predict_masses(X, self.params_, self.config_.classifier.exact())[:, : len(self.classes_)]
        return proba / proba.sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
