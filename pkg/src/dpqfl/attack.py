"""Black-box transfer attack: query the victim, fit a quantum substitute on the
returned labels, craft FGSM inputs on the substitute, score them on the victim.

The attacker side only ever sees a :class:`VictimOracle`, a callable from
inputs to ``(labels, confidences)``. Nothing in the attack path accepts victim
parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .exceptions import DegenerateLabelsError, EmptyEvaluationSetError
from .model import ClassifierConfig, class_masses, local_epoch, logits_and_loss, predict_masses
from .reporting import write_csv
from .statevec import LAMBDA_MIN, NoiseConfig, PqcArchitecture, encode_batch

ATTACK_COLUMNS = ("E", "adv_accuracy", "mean_confidence_correct", "asr", "victim_tag")
DEFAULT_STRENGTHS = (0.12, 0.14, 0.16, 0.18, 0.20)


class VictimOracle:
    """Query-only handle on a trained model.

    Wraps a ``predict_proba``-style function and exposes nothing else: calling
    it returns the argmax label and the top softmax probability per row.
    """

    __slots__ = ("_query", "num_queries")

    def __init__(self, predict_proba):
        self._query = predict_proba
        self.num_queries = 0

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        proba = np.asarray(self._query(X))
        self.num_queries += X.shape[0]
        return proba.argmax(axis=1), proba.max(axis=1)

    @classmethod
    def from_params(cls, params, cfg: ClassifierConfig) -> "VictimOracle":
        """Victim evaluated with exact (infinite-shot) depolarized expectations."""
        exact = cfg.exact()
        params = np.array(params, dtype=float)
        return cls(lambda X: predict_masses(X, params, exact))

    @classmethod
    def from_estimator(cls, estimator) -> "VictimOracle":
        return cls(estimator.predict_proba)


def query_victim(inputs, oracle: VictimOracle):
    return oracle(inputs)


@dataclass(frozen=True)
class AttackConfig:
    num_queries: int = 1000
    num_classes: int = 10
    substitute_qubits: int = 8
    substitute_layers: int = 3
    substitute_epochs: int = 10
    substitute_lr: float = 0.1
    substitute_batch_size: int = 16
    substitute_clip: float = 0.8
    strengths: tuple = DEFAULT_STRENGTHS
    fd_step: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.num_queries < self.num_classes:
            raise ValueError(f"num_queries ({self.num_queries}) must be >= num_classes ({self.num_classes})")
        if any(e < 0 for e in self.strengths):
            raise ValueError("attack strengths must be non-negative")
        object.__setattr__(self, "strengths", tuple(float(e) for e in self.strengths))

    def substitute_config(self) -> ClassifierConfig:
        # the attacker simulates its own model exactly, at the hardware noise floor
        return ClassifierConfig(
            arch=PqcArchitecture(self.substitute_qubits, self.substitute_layers),
            num_classes=self.num_classes,
            noise=NoiseConfig(None, LAMBDA_MIN),
            grad_clip=self.substitute_clip,
            learning_rate=self.substitute_lr,
            batch_size=self.substitute_batch_size,
        )


@dataclass
class Substitute:
    params: np.ndarray
    config: ClassifierConfig
    train_agreement: float

    def predict(self, X):
        return predict_masses(X, self.params, self.config).argmax(axis=1)

    def losses(self, X, labels) -> np.ndarray:
        states = encode_batch(X, self.config.arch.num_qubits)
        q = class_masses(states, self.params, self.config)
        return logits_and_loss(q, labels)[1]


def train_substitute(X_sub, y_sub, cfg: AttackConfig) -> Substitute:
    """Fit a substitute circuit to victim-assigned labels."""
    X_sub = np.asarray(X_sub, dtype=float)
    y_sub = np.asarray(y_sub, dtype=int)
    if len(np.unique(y_sub)) < 2:
        raise DegenerateLabelsError("victim returned a single class; the substitute has nothing to learn")
    scfg = cfg.substitute_config()
    params = scfg.arch.init_params(seeding.rng(cfg.seed, 0))
    for epoch in range(cfg.substitute_epochs):
        params = local_epoch(X_sub, y_sub, params, scfg, seeding.derive(cfg.seed, 1, epoch))
    sub = Substitute(params, scfg, 0.0)
    sub.train_agreement = float(np.mean(sub.predict(X_sub) == y_sub))
    return sub


def input_gradient(substitute: Substitute, X, labels, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of the substitute loss w.r.t. each input feature."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int)
    n, d = X.shape
    bumps = np.eye(d) * h
    plus = (X[:, None, :] + bumps).reshape(n * d, d)
    minus = (X[:, None, :] - bumps).reshape(n * d, d)
    reps = np.repeat(labels, d)
    diff = substitute.losses(plus, reps) - substitute.losses(minus, reps)
    return diff.reshape(n, d) / (2 * h)


def fgsm_step(X, grad, strength: float) -> np.ndarray:
    """``clip(X + E * sign(grad), 0, 1)`` with ``sign(0) = 0``."""
    return np.clip(np.asarray(X, dtype=float) + strength * np.sign(grad), 0.0, 1.0)


def fgsm(X, labels, substitute: Substitute, strength: float, h: float = 1e-3) -> np.ndarray:
    if strength == 0:
        return np.array(X, dtype=float, copy=True)
    return fgsm_step(X, input_gradient(substitute, X, labels, h), strength)


@dataclass
class AttackMetrics:
    strength: float
    adv_accuracy: float
    mean_confidence_correct: float
    asr: float
    n: int


def evaluate_attack(oracle: VictimOracle, X_adv, y_true, strength: float) -> AttackMetrics:
    """Untargeted scoring: ASR is the misclassified fraction, so it equals
    ``1 - adv_accuracy``. Confidence averages over correct predictions only
    (NaN when there are none)."""
    y_true = np.asarray(y_true, dtype=int)
    if y_true.size == 0:
        raise EmptyEvaluationSetError("no adversarial examples to evaluate")
    pred, conf = oracle(X_adv)
    correct = pred == y_true
    n_correct = int(correct.sum())
    acc = n_correct / y_true.size
    mean_conf = float(conf[correct].mean()) if n_correct else math.nan
    return AttackMetrics(strength, acc, mean_conf, (y_true.size - n_correct) / y_true.size, int(y_true.size))


@dataclass
class AttackReport:
    victim_tag: str
    substitute: Substitute
    heldout_agreement: float
    clean_accuracy: float
    clean_error: float
    metrics: list[AttackMetrics]
    adversarial: dict = field(default_factory=dict)

    def rows(self):
        return [[m.strength, m.adv_accuracy, m.mean_confidence_correct, m.asr, self.victim_tag]
                for m in self.metrics]


def run_attack(oracle: VictimOracle, X_pool, X_eval, y_eval, cfg: AttackConfig, victim_tag: str = "victim",
               keep_examples: bool = False) -> AttackReport:
    """Full pipeline against one victim.

    The first ``num_queries`` rows of ``X_pool`` are labelled by the victim and
    used to fit the substitute. ``(X_eval, y_eval)`` is held out; its clean
    victim predictions give the agreement score, and FGSM examples are crafted
    from it (using the true labels) at every strength in ``cfg.strengths``.
    """
    X_pool = np.asarray(X_pool, dtype=float)
    X_eval = np.asarray(X_eval, dtype=float)
    y_eval = np.asarray(y_eval, dtype=int)
    if X_eval.shape[0] == 0:
        raise EmptyEvaluationSetError("evaluation set is empty")
    X_sub = X_pool[: cfg.num_queries]
    y_sub, _ = oracle(X_sub)
    substitute = train_substitute(X_sub, y_sub, cfg)

    victim_eval, _ = oracle(X_eval)
    agreement = float(np.mean(substitute.predict(X_eval) == victim_eval))
    n_wrong = int(np.sum(victim_eval != y_eval))
    clean_acc = (y_eval.size - n_wrong) / y_eval.size
    clean_err = n_wrong / y_eval.size

    grad = input_gradient(substitute, X_eval, y_eval, cfg.fd_step)
    metrics, kept = [], {}
    for e in cfg.strengths:
        X_adv = X_eval.copy() if e == 0 else fgsm_step(X_eval, grad, e)
        metrics.append(evaluate_attack(oracle, X_adv, y_eval, e))
        if keep_examples:
            kept[e] = X_adv
    return AttackReport(victim_tag, substitute, agreement, clean_acc, clean_err, metrics, kept)


def write_attack_csv(path, reports: list[AttackReport]) -> Path:
    rows = [row for r in reports for row in r.rows()]
    return write_csv(path, ATTACK_COLUMNS, rows)


def write_pgm_grid(path, images_by_strength: dict, side: int | None = None, max_rows: int = 8) -> Path:
    """Binary PGM: one row per example, one column per strength."""
    strengths = sorted(images_by_strength)
    first = np.asarray(images_by_strength[strengths[0]])
    side = side or int(round(math.sqrt(first.shape[1])))
    n = min(max_rows, first.shape[0])
    grid = np.zeros((n * side, len(strengths) * side))
    for j, e in enumerate(strengths):
        imgs = np.asarray(images_by_strength[e])[:n, : side * side]
        for i, img in enumerate(imgs):
            padded = np.zeros(side * side)
            padded[: img.size] = img
            grid[i * side:(i + 1) * side, j * side:(j + 1) * side] = padded.reshape(side, side)
    pixels = np.clip(np.rint(grid * 255), 0, 255).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        f.write(pixels.tobytes())
    return path
