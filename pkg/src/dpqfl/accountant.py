"""Closed-form (epsilon, delta) accounting for updates privatised by circuit noise.

The chain is::

    shot variance        2**D / M
    per-point gradient   2**D c(p) / (2M)
    per-epoch noise      2**D B**2 c(p) / (2 M |D|)
    total update         K * eta * var      (PAPER mode)
                         K * eta**2 * var   (DERIVED mode)
    sensitivity          eta * K * 2 C / |D|
    per-round epsilon    (sensitivity / sigma) * sqrt(2 ln(1.25 / delta))
    composed epsilon     advanced composition over N*T mechanisms

with ``p = 1 - (1 - lam)**L`` and ``c(p) = 1 - (1 - p)**2``.

PAPER mode reproduces the published per-component variance verbatim. DERIVED
mode is what the update ``-eta * sum_k xi_k`` over K independent epochs
actually has; the two differ by exactly a factor ``eta``.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Iterable

from .exceptions import UnachievableError, ZeroSigmaError

SWEEP_COLUMNS = ("M", "lambda", "p", "c_p", "sigma", "delta_nt", "epsilon_round", "epsilon_total", "delta_total")


class VarianceMode(str, enum.Enum):
    PAPER = "paper"
    DERIVED = "derived"


def cumulative_p(lam: float, num_layers: int) -> float:
    return 1.0 - (1.0 - lam) ** num_layers


def c_of_p(p: float) -> float:
    return 1.0 - (1.0 - p) ** 2


@dataclass(frozen=True)
class DpParams:
    """Everything the accountant needs. ``shots`` must be finite."""

    num_qubits: int
    num_layers: int
    shots: int
    lam: float
    grad_bound: float = 1.0
    learning_rate: float = 0.01
    local_epochs: int = 5
    clip: float = 0.8
    local_dataset_size: int = 6000
    num_clients: int = 10
    num_rounds: int = 50
    delta: float = 1e-5 / 1000
    delta_prime: float = 1e-5 / 2
    variance_mode: VarianceMode = VarianceMode.PAPER

    def __post_init__(self):
        object.__setattr__(self, "variance_mode", VarianceMode(self.variance_mode))
        if self.shots is None or math.isinf(self.shots):
            raise ValueError("shots must be finite for privacy accounting")
        positive = ("num_qubits", "num_layers", "shots", "grad_bound", "learning_rate",
                    "local_epochs", "local_dataset_size", "num_clients", "num_rounds")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam!r}")
        if self.clip < 0:
            raise ValueError(f"clip must be non-negative, got {self.clip!r}")
        for name in ("delta", "delta_prime"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {getattr(self, name)!r}")
        if self.num_mechanisms * self.delta + self.delta_prime >= 1.0:
            raise ValueError("N*T*delta + delta_prime must be < 1")

    @classmethod
    def from_total_delta(cls, delta_total: float = 1e-5, **kwargs) -> "DpParams":
        """Split ``delta_total`` evenly: half to ``delta_prime``, half across the N*T rounds."""
        n = kwargs.get("num_clients", 10) * kwargs.get("num_rounds", 50)
        return cls(delta=delta_total / (2 * n), delta_prime=delta_total / 2, **kwargs)

    @property
    def num_mechanisms(self) -> int:
        return self.num_clients * self.num_rounds

    def replace(self, **changes) -> "DpParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variance_mode"] = self.variance_mode.value
        return d


@dataclass(frozen=True)
class DpBudget:
    p: float
    c_p: float
    per_point_grad_var: float
    per_example_noise_var: float
    total_update_var: float
    sigma: float
    sensitivity: float
    epsilon_round: float
    epsilon_total: float
    delta_total: float
    variance_mode: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def shot_variance(num_qubits: int, shots: int) -> float:
    """Trace bound ``Tr(O^2)/M = 2**D / M`` for a Pauli observable."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots!r}")
    return 2.0 ** num_qubits / shots


def per_point_gradient_variance(params: DpParams) -> float:
    c = c_of_p(cumulative_p(params.lam, params.num_layers))
    return shot_variance(params.num_qubits, params.shots) * c / 2.0


def gradient_noise_variance(params: DpParams) -> float:
    """Per-component noise bound on the dataset-averaged gradient."""
    return per_point_gradient_variance(params) * params.grad_bound ** 2 / params.local_dataset_size


def total_update_variance(params: DpParams) -> float:
    var = gradient_noise_variance(params)
    k, eta = params.local_epochs, params.learning_rate
    if params.variance_mode is VarianceMode.PAPER:
        return k * eta * var
    return k * eta ** 2 * var


def sensitivity(params: DpParams) -> float:
    return params.learning_rate * params.local_epochs * 2.0 * params.clip / params.local_dataset_size


def gaussian_epsilon(sens: float, sigma: float, delta: float) -> float:
    """Gaussian-mechanism epsilon for L2 sensitivity ``sens`` and noise ``sigma``."""
    if sigma <= 0.0:
        raise ZeroSigmaError("noise standard deviation is zero; no finite epsilon can be certified")
    return sens / sigma * math.sqrt(2.0 * math.log(1.25 / delta))


def epsilon_round(params: DpParams) -> float:
    return gaussian_epsilon(sensitivity(params), math.sqrt(total_update_variance(params)), params.delta)


def advanced_composition(eps: float, k: int, delta_prime: float) -> float:
    if eps > 700.0:
        return math.inf
    return math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps + k * eps * math.expm1(eps) / 2.0


def compose(params: DpParams, eps_round: float | None = None) -> DpBudget:
    """Full budget for ``params``; ``eps_round`` overrides the computed per-round epsilon."""
    p = cumulative_p(params.lam, params.num_layers)
    total_var = total_update_variance(params)
    if eps_round is None:
        eps_round = epsilon_round(params)
    nt = params.num_mechanisms
    return DpBudget(
        p=p,
        c_p=c_of_p(p),
        per_point_grad_var=per_point_gradient_variance(params),
        per_example_noise_var=gradient_noise_variance(params),
        total_update_var=total_var,
        sigma=math.sqrt(total_var),
        sensitivity=sensitivity(params),
        epsilon_round=eps_round,
        epsilon_total=advanced_composition(eps_round, nt, params.delta_prime),
        delta_total=nt * params.delta + params.delta_prime,
        variance_mode=params.variance_mode.value,
    )


def epsilon_total(params: DpParams) -> float:
    return compose(params).epsilon_total


def solve_shots_for_epsilon(target: float, params: DpParams, *, m_max: int = 10 ** 6) -> tuple[int, int]:
    """Bracket the shot count whose composed epsilon meets ``target``.

    Returns ``(lo, hi)``: the largest M with ``epsilon_total <= target`` and the
    smallest M with ``epsilon_total >= target`` (equal when hit exactly).
    epsilon_total is increasing in M, so plain integer bisection works.
    """
    def eps(m):
        return epsilon_total(params.replace(shots=m))

    if eps(1) > target or eps(m_max) < target:
        raise UnachievableError(
            f"target epsilon {target!r} outside [{eps(1)!r}, {eps(m_max)!r}] for M in [1, {m_max}]"
        )
    lo, hi = 1, m_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eps(mid) <= target:
            lo = mid
        else:
            hi = mid
    if eps(lo) == target:
        return lo, lo
    if eps(hi) == target:
        return hi, hi
    return lo, hi


def calibrate_grad_bound(target: float, params: DpParams, *, lo: float = 1e-6, hi: float = 1e6,
                         rtol: float = 1e-12) -> float:
    """Find the gradient bound B for which ``epsilon_total(params) == target``.

    epsilon_total is strictly decreasing in B, so bisection in log-space.
    """
    def eps(b):
        return epsilon_total(params.replace(grad_bound=b))

    if not eps(hi) <= target <= eps(lo):
        raise UnachievableError(f"target {target!r} not reachable for B in [{lo}, {hi}]")
    a, b = math.log(lo), math.log(hi)
    while b - a > rtol:
        mid = (a + b) / 2
        if eps(math.exp(mid)) > target:
            a = mid
        else:
            b = mid
    return math.exp((a + b) / 2)


def sweep(shots: Iterable[int], lambdas: Iterable[float], params: DpParams) -> list[dict]:
    """One row per (M, lambda) grid point, columns as in ``SWEEP_COLUMNS``."""
    rows = []
    for m in shots:
        for lam in lambdas:
            b = compose(params.replace(shots=m, lam=lam))
            rows.append({
                "M": m, "lambda": lam, "p": b.p, "c_p": b.c_p, "sigma": b.sigma,
                "delta_nt": b.sensitivity, "epsilon_round": b.epsilon_round,
                "epsilon_total": b.epsilon_total, "delta_total": b.delta_total,
            })
    if not rows:
        raise ValueError("sweep grid is empty")
    return rows


def budget_report(params: DpParams | None, budget: DpBudget | None, **extra) -> dict:
    """JSON-ready report: echoed params, every budget field and the variance mode.

    ``params`` is None when the run had no finite shot count to account.
    """
    report = {"params": None if params is None else params.to_dict(),
              "variance_mode": None if params is None else params.variance_mode.value,
              "budget": None if budget is None else budget.to_dict()}
    report.update(extra)
    return report
