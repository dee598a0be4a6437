"""Pure statevector simulation of the layered rotation/CNOT classifier circuit.

Conventions
-----------
* Qubit 0 is the most significant bit of a basis-state index.
* ``R_a(theta) = exp(-i theta/2 * P_a)`` for Pauli ``P_a``.
* One circuit layer applies Rx, Ry, Rz to every qubit (qubit-major), then
  CNOT(i, i+1) for i = 0..D-2 in ascending order. CNOTs act even when all
  angles are zero.
* Depolarizing noise is folded into a single end-of-circuit channel acting on
  the output distribution, with cumulative probability ``1 - (1 - lam)**L``.

Everything here is a pure function of its inputs. The ``_batch`` kernels work
on stacks of states of shape ``(B, 2**D)`` and are what the classifier uses;
the public single-state operations are thin wrappers around them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .accountant import c_of_p, cumulative_p
from .exceptions import (
    DimensionTooLargeError,
    InvalidProbabilityError,
    QubitIndexError,
    ShapeMismatchError,
    ZeroVectorError,
)

#: Sentinel for exact (infinite-shot) expectation values.
INFINITE = None
LAMBDA_MIN = 1e-3
MAX_QUBITS = 14
NORM_ATOL = 1e-10
_ZERO_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class Statevector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise DimensionTooLargeError(f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2 ** self.num_qubits:
            raise ShapeMismatchError(
                f"expected {2 ** self.num_qubits} amplitudes for {self.num_qubits} qubits, got {amps.shape[0]}"
            )
        norm = np.vdot(amps, amps).real
        if abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, num_qubits: int) -> "Statevector":
        amps = np.zeros(2 ** num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class PqcArchitecture:
    num_qubits: int
    num_layers: int

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise DimensionTooLargeError(f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")

    @property
    def param_shape(self) -> tuple[int, int, int]:
        return (self.num_layers, self.num_qubits, 3)

    @property
    def num_params(self) -> int:
        return self.num_layers * self.num_qubits * 3

    def gate_sequence(self) -> list[tuple]:
        """Flat gate list in application order, e.g. ``("rx", layer, qubit)``
        or ``("cnot", layer, control, target)``."""
        gates = []
        for layer in range(self.num_layers):
            for q in range(self.num_qubits):
                for axis in ("rx", "ry", "rz"):
                    gates.append((axis, layer, q))
            for q in range(self.num_qubits - 1):
                gates.append(("cnot", layer, q, q + 1))
        return gates

    def check_params(self, params) -> np.ndarray:
        """Validate a parameter tensor (optionally with leading batch axes)."""
        params = np.asarray(params, dtype=float)
        if params.shape[-3:] != self.param_shape:
            raise ShapeMismatchError(f"params shape {params.shape} does not end in {self.param_shape}")
        if not np.all(np.isfinite(params)):
            raise ValueError("params contain non-finite values")
        return params

    def init_params(self, rng) -> np.ndarray:
        """Uniform angles in [-pi, pi]."""
        rng = np.random.default_rng(rng)
        return rng.uniform(-np.pi, np.pi, size=self.param_shape)


@dataclass(frozen=True)
class NoiseConfig:
    """Shot count (``None`` = exact expectations) and per-gate depolarizing rate.

    ``per_gate_lambda`` may not go below ``lambda_min`` (the hardware floor)
    unless ``allow_noiseless`` is set, which exists for unit tests only.
    """

    shots: int | None = INFINITE
    per_gate_lambda: float = LAMBDA_MIN
    lambda_min: float = LAMBDA_MIN
    allow_noiseless: bool = False

    def __post_init__(self):
        if self.shots is not None and (int(self.shots) != self.shots or self.shots < 1):
            raise ValueError(f"shots must be a positive integer or None, got {self.shots!r}")
        lam = self.per_gate_lambda
        if not 0.0 <= lam <= 1.0:
            raise InvalidProbabilityError(f"per_gate_lambda must be in [0, 1], got {lam!r}")
        if lam < self.lambda_min and not self.allow_noiseless:
            raise ValueError(
                f"per_gate_lambda={lam!r} is below the hardware floor lambda_min={self.lambda_min!r}"
            )

    @classmethod
    def noiseless(cls, shots=INFINITE) -> "NoiseConfig":
        return cls(shots=shots, per_gate_lambda=0.0, allow_noiseless=True)

    @property
    def exact(self) -> bool:
        return self.shots is None

    def cumulative_p(self, num_layers: int) -> float:
        return cumulative_p(self.per_gate_lambda, num_layers)

    def c_of_p(self, num_layers: int) -> float:
        return c_of_p(self.cumulative_p(num_layers))


@dataclass(frozen=True, eq=False)
class MeasurementHistogram:
    counts: np.ndarray
    total: int = field(default=0)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValueError("negative counts")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(counts.sum()))

    def frequencies(self) -> np.ndarray:
        return self.counts / self.total

    def expectation_z(self, qubit: int) -> float:
        """Shot estimate (1/M) sum_j H_j of Pauli-Z on ``qubit``."""
        n = _num_qubits_for(self.counts.shape[0])
        return float(z_signs(n, qubit) @ self.counts / self.total)


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _num_qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2 ** n != dim:
        raise ShapeMismatchError(f"length {dim} is not a power of two >= 2")
    return n


@lru_cache(maxsize=None)
def z_signs(num_qubits: int, qubit: int) -> np.ndarray:
    """Eigenvalue (+1/-1) of Z on ``qubit`` for every basis index."""
    if not 0 <= qubit < num_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range for {num_qubits} qubits")
    bits = (np.arange(2 ** num_qubits) >> (num_qubits - 1 - qubit)) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


@lru_cache(maxsize=None)
def _cnot_ladder_perm(num_qubits: int) -> np.ndarray:
    """Index map for the whole CNOT ladder: ``new[i] = old[perm[i]]``."""
    idx = np.arange(2 ** num_qubits)
    perm = idx.copy()
    for c in range(num_qubits - 1):
        t = c + 1
        cbit = (idx >> (num_qubits - 1 - c)) & 1
        gate = idx ^ (cbit << (num_qubits - 1 - t))
        perm = perm[gate]
    perm.setflags(write=False)
    return perm


def rotation_matrices(angles) -> np.ndarray:
    """Fused ``Rz(c) @ Ry(b) @ Rx(a)`` for angles ``(..., 3)`` -> ``(..., 2, 2)``."""
    angles = np.asarray(angles, dtype=float)
    a, b, c = angles[..., 0] / 2, angles[..., 1] / 2, angles[..., 2] / 2
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    # Ry(b) @ Rx(a)
    m00 = cb * ca + 1j * sb * sa
    m01 = -1j * cb * sa - sb * ca
    m10 = sb * ca - 1j * cb * sa
    m11 = -1j * sb * sa + cb * ca
    em, ep = np.exp(-1j * c), np.exp(1j * c)
    out = np.empty(angles.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = em * m00
    out[..., 0, 1] = em * m01
    out[..., 1, 0] = ep * m10
    out[..., 1, 1] = ep * m11
    return out


def _apply_1q_batch(states: np.ndarray, mats: np.ndarray, qubit: int, n: int) -> np.ndarray:
    b = states.shape[0]
    s = states.reshape(b, 2 ** qubit, 2, 2 ** (n - qubit - 1))
    s0, s1 = s[:, :, 0, :], s[:, :, 1, :]
    m = mats.reshape(-1, 2, 2)[:, :, :, None, None]
    out = np.empty_like(s)
    out[:, :, 0, :] = m[:, 0, 0] * s0 + m[:, 0, 1] * s1
    out[:, :, 1, :] = m[:, 1, 0] * s0 + m[:, 1, 1] * s1
    return out.reshape(b, -1)


def run_circuit_batch(states, params) -> np.ndarray:
    """Evolve a stack of states through the layered circuit.

    ``states`` is ``(B, 2**D)`` or ``(2**D,)``; ``params`` is ``(L, D, 3)``
    (shared) or ``(B, L, D, 3)`` (one parameter set per circuit). A single
    state with batched params is broadcast.
    """
    states = np.asarray(states, dtype=complex)
    params = np.asarray(params, dtype=float)
    n = _num_qubits_for(states.shape[-1])
    num_layers = params.shape[-3]
    if params.shape[-2:] != (n, 3):
        raise ShapeMismatchError(f"params shape {params.shape} incompatible with {n} qubits")
    if params.ndim == 4:
        if states.ndim == 1:
            states = np.broadcast_to(states, (params.shape[0], states.shape[0]))
        if states.shape[0] != params.shape[0]:
            raise ShapeMismatchError(f"{states.shape[0]} states vs {params.shape[0]} parameter sets")
    elif params.ndim != 3:
        raise ShapeMismatchError(f"params must have 3 or 4 axes, got {params.ndim}")
    squeeze = states.ndim == 1
    out = np.array(states, dtype=complex).reshape(-1, 2 ** n)
    mats = rotation_matrices(params)
    perm = _cnot_ladder_perm(n)
    for layer in range(num_layers):
        for q in range(n):
            if params.ndim == 4:
                m = mats[:, layer, q]
            else:
                m = np.broadcast_to(mats[layer, q], (out.shape[0], 2, 2))
            out = _apply_1q_batch(out, m, q, n)
        if n > 1:
            out = out[:, perm]
    return out[0] if squeeze else out


def encode_batch(features, num_qubits: int) -> np.ndarray:
    """Amplitude-encode rows of ``features`` into ``(n, 2**D)`` complex states."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    dim = 2 ** num_qubits
    if x.shape[1] > dim:
        raise DimensionTooLargeError(f"{x.shape[1]} features do not fit in {num_qubits} qubits ({dim} amplitudes)")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < _ZERO_NORM):
        bad = int(np.flatnonzero(norms < _ZERO_NORM)[0])
        raise ZeroVectorError(f"feature vector {bad} has zero norm and cannot be amplitude-encoded")
    out = np.zeros((x.shape[0], dim), dtype=complex)
    out[:, : x.shape[1]] = x / norms[:, None]
    return out


def depolarize_batch(probs, p: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    return (1.0 - p) * probs + p / probs.shape[-1]


def sample_counts(probs, shots: int, rng) -> np.ndarray:
    """Multinomial counts for each row of ``probs`` (last axis is the outcome)."""
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    return np.random.default_rng(rng).multinomial(int(shots), probs)


# ---------------------------------------------------------------------------
# single-state operations
# ---------------------------------------------------------------------------

def encode_amplitude(features, num_qubits: int) -> Statevector:
    """L2-normalise ``features`` into the amplitudes of a ``num_qubits`` state,
    zero-padding up to ``2**num_qubits``."""
    features = np.asarray(features, dtype=float).reshape(-1)
    return Statevector(num_qubits, encode_batch(features[None, :], num_qubits)[0])


def apply_pqc(state: Statevector, arch: PqcArchitecture, params) -> Statevector:
    if state.num_qubits != arch.num_qubits:
        raise ShapeMismatchError(f"state has {state.num_qubits} qubits, architecture {arch.num_qubits}")
    params = arch.check_params(params)
    if params.ndim != 3:
        raise ShapeMismatchError("apply_pqc takes a single parameter tensor; use run_circuit_batch for stacks")
    return Statevector(state.num_qubits, run_circuit_batch(state.amplitudes, params))


def expectation_z(state: Statevector, qubit: int) -> float:
    """<psi|Z_qubit|psi>."""
    probs = np.abs(state.amplitudes) ** 2
    return float(z_signs(state.num_qubits, qubit) @ probs)


def basis_probabilities(state: Statevector) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


def _check_distribution(probs: np.ndarray) -> None:
    if np.any(probs < -1e-12) or not np.all(np.isfinite(probs)):
        raise InvalidProbabilityError("probabilities must be finite and non-negative")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-9):
        raise InvalidProbabilityError("probabilities must sum to 1")


def apply_depolarizing(probs, p: float) -> np.ndarray:
    """Mix a basis distribution with the uniform one: ``(1-p) probs + p/2**D``.

    For any traceless observable the expectation scales by ``1 - p``.
    """
    probs = np.asarray(probs, dtype=float)
    if not 0.0 <= p <= 1.0:
        raise InvalidProbabilityError(f"depolarizing probability must be in [0, 1], got {p!r}")
    _check_distribution(probs)
    return depolarize_batch(probs, p)


def sample_histogram(probs, shots: int, rng_seed=None) -> MeasurementHistogram:
    """Draw ``shots`` basis-state outcomes from ``probs``. Deterministic per seed."""
    probs = np.asarray(probs, dtype=float)
    _check_distribution(probs)
    if int(shots) < 1:
        raise ValueError(f"shots must be >= 1, got {shots!r}")
    return MeasurementHistogram(sample_counts(probs, shots, rng_seed))
