"""Quantum classifier: bin readout, cross-entropy, parameter-shift gradients,
clipped local descent, and a scikit-learn estimator wrapping all of it.

Readout: with C classes on D qubits, class ``c`` owns every basis state whose
index is congruent to ``c`` mod C. Its logit is ``log(max(floor, q_c))`` where
``q_c`` is the (depolarized, optionally shot-sampled) probability mass in the
bin. Each ``q_c`` is the expectation of a projector, so the parameter-shift
rule gives its exact derivative; the loss gradient follows by the chain rule.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import seeding
from .exceptions import EmptyShardError, ShapeMismatchError
from .statevec import (
    LAMBDA_MIN,
    NoiseConfig,
    PqcArchitecture,
    depolarize_batch,
    encode_batch,
    run_circuit_batch,
    sample_counts,
)

PROB_FLOOR = 1e-9
SHIFT = np.pi / 2

# stream ids under an example's seed
_FORWARD, _PLUS, _MINUS = 0, 1, 2


@dataclass(frozen=True)
class ClassifierConfig:
    arch: PqcArchitecture
    num_classes: int = 10
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grad_clip: float = 0.8
    learning_rate: float = 0.01
    grad_bound: float = 1.0
    batch_size: int = 64
    optimizer: str = "sgd"

    def __post_init__(self):
        if not 2 <= self.num_classes <= 2 ** self.arch.num_qubits:
            raise ValueError(f"num_classes must be in [2, 2**D], got {self.num_classes}")
        for name in ("grad_clip", "grad_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    @property
    def p(self) -> float:
        return self.noise.cumulative_p(self.arch.num_layers)

    def exact(self) -> "ClassifierConfig":
        """Same circuit and depolarizing, infinite shots (used for evaluation)."""
        noise = NoiseConfig(None, self.noise.per_gate_lambda, self.noise.lambda_min, self.noise.allow_noiseless)
        return dataclasses.replace(self, noise=noise)


@lru_cache(maxsize=None)
def _bin_matrix(dim: int, num_classes: int) -> np.ndarray:
    m = np.zeros((dim, num_classes))
    m[np.arange(dim), np.arange(dim) % num_classes] = 1.0
    m.setflags(write=False)
    return m


def _output_probs(states, params, cfg: ClassifierConfig) -> np.ndarray:
    amps = run_circuit_batch(states, params)
    return depolarize_batch(np.abs(amps) ** 2, cfg.p)


def _sample_rows(probs, shots, seq) -> np.ndarray:
    return sample_counts(probs, shots, np.random.default_rng(seq)) / shots


def bin_masses(probs, num_classes: int) -> np.ndarray:
    """Per-class probability mass ``q_c`` for basis distributions ``(..., 2**D)``."""
    probs = np.asarray(probs, dtype=float)
    return probs @ _bin_matrix(probs.shape[-1], num_classes)


def logits_and_loss(q, labels, floor: float = PROB_FLOOR):
    """Log-mass logits, softmax cross-entropy loss and ``dloss/dq``.

    ``q`` is ``(n, C)``; returns arrays of shape ``(n, C)``, ``(n,)``, ``(n, C)``.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    qf = np.maximum(q, floor)
    logits = np.log(qf)
    total = qf.sum(axis=1)
    rows = np.arange(q.shape[0])
    loss = np.log(total) - logits[rows, labels]
    # d/dq of log(sum) - log(q_y); the floor's kink is treated as active
    dq = np.repeat((1.0 / total)[:, None], q.shape[1], axis=1)
    dq[rows, labels] -= 1.0 / qf[rows, labels]
    return logits, loss, dq


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_masses(states, params, cfg: ClassifierConfig, seeds=None) -> np.ndarray:
    """``q`` for a stack of encoded states under one parameter tensor.

    With finite shots each row is estimated from its own histogram, drawn from
    the ``_FORWARD`` stream of the corresponding entry of ``seeds``.
    """
    probs = _output_probs(states, params, cfg)
    if cfg.noise.shots is not None:
        if seeds is None:
            raise ValueError("finite-shot evaluation needs one seed per example")
        probs = np.stack([
            _sample_rows(row, cfg.noise.shots, seeding.derive(s, _FORWARD)) for row, s in zip(probs, seeds)
        ])
    return bin_masses(probs, cfg.num_classes)


def _check_example(features, label, cfg):
    features = np.asarray(features, dtype=float).reshape(-1)
    if not 0 <= int(label) < cfg.num_classes:
        raise ValueError(f"label {label} outside [0, {cfg.num_classes})")
    return features, int(label)


def forward(features, label, params, cfg: ClassifierConfig, seed=None):
    """Logits and cross-entropy loss for a single labelled example."""
    features, label = _check_example(features, label, cfg)
    params = cfg.arch.check_params(params)
    state = encode_batch(features, cfg.arch.num_qubits)
    q = class_masses(state, params, cfg, seeds=[seeding.as_seed_sequence(seed)])
    logits, loss, _ = logits_and_loss(q, [label])
    return logits[0], float(loss[0])


def parameter_shift(fn, params) -> np.ndarray:
    """Two-point shift rule ``(fn(w + pi/2 e_d) - fn(w - pi/2 e_d)) / 2`` for
    every entry ``d`` of ``params``. ``fn`` maps a parameter array to a scalar."""
    params = np.asarray(params, dtype=float)
    grad = np.empty_like(params)
    for d in np.ndindex(params.shape):
        plus, minus = params.copy(), params.copy()
        plus[d] += SHIFT
        minus[d] -= SHIFT
        grad[d] = (fn(plus) - fn(minus)) / 2.0
    return grad


def _shifted(params: np.ndarray) -> np.ndarray:
    """``(2P, L, D, 3)``: the P plus-shifts then the P minus-shifts."""
    n = params.size
    eye = np.eye(n).reshape((n,) + params.shape) * SHIFT
    return np.concatenate([params + eye, params - eye])


def batch_gradients(states, labels, params, cfg: ClassifierConfig, seeds=None):
    """Per-example parameter-shift gradients and forward losses.

    Returns ``(grads, losses, q)`` with ``grads`` shaped ``(n, L, D, 3)``. Each
    of the 2P shifted circuits per example gets an independent histogram when
    shots are finite: all plus-shifts come from the example's ``_PLUS`` stream,
    all minus-shifts from its ``_MINUS`` stream.
    """
    states = np.atleast_2d(states)
    labels = np.asarray(labels, dtype=int)
    n, P = states.shape[0], params.size
    shots = cfg.noise.shots
    if shots is not None and (seeds is None or len(seeds) != n):
        raise ValueError("finite-shot gradients need one seed per example")

    q0 = class_masses(states, params, cfg, seeds)
    _, losses, dq = logits_and_loss(q0, labels)

    shifted = _shifted(params)
    probs = _output_probs(np.repeat(states, 2 * P, axis=0), np.tile(shifted, (n, 1, 1, 1)), cfg)
    probs = probs.reshape(n, 2 * P, -1)
    if shots is not None:
        probs = np.stack([
            np.concatenate([
                _sample_rows(probs[j, :P], shots, seeding.derive(seeds[j], _PLUS)),
                _sample_rows(probs[j, P:], shots, seeding.derive(seeds[j], _MINUS)),
            ])
            for j in range(n)
        ])
    qs = bin_masses(probs, cfg.num_classes)
    dq_dw = (qs[:, :P] - qs[:, P:]) / 2.0
    grads = np.einsum("npc,nc->np", dq_dw, dq)
    return grads.reshape((n,) + params.shape), losses, q0


def parameter_shift_gradient(features, label, params, cfg: ClassifierConfig, seed=None) -> np.ndarray:
    """Loss gradient for one example via the shift rule on the class masses."""
    features, label = _check_example(features, label, cfg)
    params = cfg.arch.check_params(params)
    state = encode_batch(features, cfg.arch.num_qubits)
    seeds = None if cfg.noise.shots is None else [seeding.as_seed_sequence(seed)]
    grads, _, _ = batch_gradients(state, [label], params, cfg, seeds)
    return grads[0]


def clip_gradient(grad, clip: float) -> np.ndarray:
    """Rescale ``grad`` onto the L2 ball of radius ``clip`` if it lies outside."""
    grad = np.asarray(grad, dtype=float)
    norm = np.linalg.norm(grad)
    if norm <= clip:
        return grad.copy()
    out = grad * (clip / norm)
    while np.linalg.norm(out) > clip:  # float rounding can overshoot by an ulp
        out *= 1.0 - 2.0 ** -52
    return out


class Adam:
    """Adam state for one local training run. Not covered by the accountant."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def local_epoch(X, y, params, cfg: ClassifierConfig, seed=None, optimizer=None, return_stats=False):
    """One pass over a client shard.

    The shard is shuffled (stream ``0`` of ``seed``), split into minibatches,
    and for each batch the per-example gradients are clipped, averaged and
    applied as ``params - lr * mean``. Example ``j`` of batch ``b`` draws its
    shot noise from ``derive(seed, 1, b, j)``. Pass an :class:`Adam` instance
    as ``optimizer`` to use Adam instead of plain descent.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyShardError("local_epoch needs a non-empty 2-D shard")
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} examples but {y.shape[0]} labels")
    params = cfg.arch.check_params(params).copy()
    states = encode_batch(X, cfg.arch.num_qubits)
    order = seeding.rng(seed, 0).permutation(X.shape[0])
    losses, correct = [], 0
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        seeds = [seeding.derive(seed, 1, b, j) for j in range(len(idx))]
        grads, batch_losses, q0 = batch_gradients(states[idx], y[idx], params, cfg, seeds)
        clipped = np.stack([clip_gradient(g, cfg.grad_clip) for g in grads])
        mean = clipped.mean(axis=0)
        if optimizer is None:
            params = params - cfg.learning_rate * mean
        else:
            params = optimizer.step(params, mean)
        losses.append(batch_losses)
        correct += int(np.sum(q0.argmax(axis=1) == y[idx]))
    if return_stats:
        return params, float(np.concatenate(losses).mean()), correct / X.shape[0]
    return params


def predict_masses(X, params, cfg: ClassifierConfig, seed=None) -> np.ndarray:
    """Normalised class probabilities ``softmax(logits)`` for every row of ``X``.

    Uses exact depolarized expectations unless ``cfg`` has finite shots, in
    which case row ``i`` samples from ``derive(seed, i)``.
    """
    states = encode_batch(X, cfg.arch.num_qubits)
    seeds = None if cfg.noise.shots is None else [seeding.derive(seed, i) for i in range(states.shape[0])]
    q = class_masses(states, params, cfg, seeds)
    logits, _, _ = logits_and_loss(q, np.zeros(q.shape[0], dtype=int))
    return softmax(logits)


def evaluate(X, y, params, cfg: ClassifierConfig, seed=None) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``params`` on ``(X, y)``."""
    y = np.asarray(y, dtype=int)
    proba = predict_masses(X, params, cfg, seed)
    loss = -np.log(proba[np.arange(len(y)), y])
    return float(loss.mean()), float(np.mean(proba.argmax(axis=1) == y))


def check_n_features(estimator, X):
    """Reject inputs whose width differs from what ``estimator`` was fitted on."""
    if X.shape[1] != estimator.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features, but {type(estimator).__name__} "
                         f"is expecting {estimator.n_features_in_} features as input.")
    return X


class QuantumClassifier(ClassifierMixin, BaseEstimator):
    """Single-party amplitude-encoded circuit classifier trained with clipped
    parameter-shift descent.

    Parameters
    ----------
    n_qubits, n_layers : int
        Circuit width and depth. Inputs may have at most ``2**n_qubits`` features.
    n_classes : int or None
        Number of readout bins. Defaults to the number of distinct labels.
    shots : int or None
        Measurement shots per circuit execution; None gives exact expectations.
    depolarizing : float
        Per-gate depolarizing rate, floored at ``lambda_min``.
    n_epochs, batch_size, learning_rate, grad_clip, optimizer
        Local training schedule.
    random_state : int or None
        Master seed for initialisation, shuffling and shot noise.

    Attributes
    ----------
    classes_ : ndarray
    params_ : ndarray of shape (n_layers, n_qubits, 3)
    config_ : ClassifierConfig
    """

    def __init__(self, n_qubits=4, n_layers=2, n_classes=None, shots=None, depolarizing=LAMBDA_MIN,
                 lambda_min=LAMBDA_MIN, n_epochs=10, batch_size=64, learning_rate=0.01, grad_clip=0.8,
                 optimizer="sgd", random_state=None):
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.n_classes = n_classes
        self.shots = shots
        self.depolarizing = depolarizing
        self.lambda_min = lambda_min
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.optimizer = optimizer
        self.random_state = random_state

    def _make_config(self, n_classes):
        return ClassifierConfig(
            arch=PqcArchitecture(self.n_qubits, self.n_layers),
            num_classes=n_classes,
            noise=NoiseConfig(self.shots, self.depolarizing, self.lambda_min),
            grad_clip=self.grad_clip,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = self.n_classes or max(len(self.classes_), 2)
        self.config_ = self._make_config(n_classes)
        self.seed_ = seeding.resolve_master_seed(self.random_state)
        params = self.config_.arch.init_params(seeding.rng(self.seed_, 0))
        opt = Adam(self.learning_rate) if self.optimizer == "adam" else None
        for epoch in range(self.n_epochs):
            params = local_epoch(X, y_idx, params, self.config_, seeding.derive(self.seed_, 1, epoch), opt)
        self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_n_features(self, check_array(X))
        proba = predict_masses(X, self.params_, self.config_.exact())
        return proba[:, : len(self.classes_)] / proba[:, : len(self.classes_)].sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
