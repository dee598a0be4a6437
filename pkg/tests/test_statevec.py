import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpqfl.exceptions import (
    DimensionTooLargeError,
    InvalidProbabilityError,
    QubitIndexError,
    ShapeMismatchError,
    ZeroVectorError,
)
from dpqfl.statevec import (
    LAMBDA_MIN,
    MeasurementHistogram,
    NoiseConfig,
    PqcArchitecture,
    Statevector,
    apply_depolarizing,
    apply_pqc,
    basis_probabilities,
    encode_amplitude,
    encode_batch,
    expectation_z,
    rotation_matrices,
    run_circuit_batch,
    sample_histogram,
)

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)
P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])


def _rot(pauli, theta):
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * pauli


def _embed(op, qubit, n):
    mats = [op if k == qubit else I2 for k in range(n)]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _cnot(c, t, n):
    return _embed(P0, c, n) + _embed(P1, c, n) @ _embed(X, t, n)


def dense_unitary(arch, params):
    """Gate-by-gate Kronecker construction, qubit 0 most significant."""
    n = arch.num_qubits
    u = np.eye(2 ** n, dtype=complex)
    pauli = {"rx": X, "ry": Y, "rz": Z}
    for gate in arch.gate_sequence():
        if gate[0] == "cnot":
            g = _cnot(gate[2], gate[3], n)
        else:
            g = _embed(_rot(pauli[gate[0]], params[gate[1], gate[2], "xyz".index(gate[0][1])]), gate[2], n)
        u = g @ u
    return u


class TestStatevector:
    def test_zero_state(self):
        s = Statevector.zero(3)
        assert s.dim == 8 and s.amplitudes[0] == 1 and s.norm() == pytest.approx(1.0)

    def test_amplitudes_are_read_only(self):
        s = Statevector.zero(2)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            Statevector(1, [1.0, 1.0])

    def test_rejects_wrong_length(self):
        with pytest.raises(ShapeMismatchError):
            Statevector(2, [1.0, 0.0])

    def test_qubit_limit(self):
        with pytest.raises(DimensionTooLargeError):
            PqcArchitecture(15, 1)


class TestEncoding:
    def test_normalizes(self):
        s = encode_amplitude([3.0, 4.0], 1)
        np.testing.assert_allclose(s.amplitudes, [0.6, 0.8])

    def test_zero_pads(self):
        s = encode_amplitude([1.0, 1.0, 1.0], 2)
        np.testing.assert_allclose(s.amplitudes, np.array([1, 1, 1, 0]) / np.sqrt(3))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            encode_amplitude([0.0, 0.0], 1)

    def test_too_many_features(self):
        with pytest.raises(DimensionTooLargeError):
            encode_amplitude(np.ones(5), 2)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=16).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_unit_norm_property(self, features):
        s = encode_amplitude(features, 4)
        assert abs(np.vdot(s.amplitudes, s.amplitudes).real - 1.0) < 1e-12


class TestGates:
    def test_rx_pi_flips_zero(self):
        out = apply_pqc(Statevector.zero(1), PqcArchitecture(1, 1), [[[np.pi, 0.0, 0.0]]])
        np.testing.assert_allclose(out.amplitudes, [0.0, -1j], atol=1e-15)

    def test_zero_angles_leave_zero_state(self):
        arch = PqcArchitecture(3, 2)
        out = apply_pqc(Statevector.zero(3), arch, np.zeros(arch.param_shape))
        np.testing.assert_allclose(out.amplitudes, Statevector.zero(3).amplitudes)

    def test_cnots_act_at_zero_angles(self):
        # |100> -> CNOT(0,1) -> |110> -> CNOT(1,2) -> |111>
        arch = PqcArchitecture(3, 1)
        state = Statevector(3, np.eye(8)[0b100])
        out = apply_pqc(state, arch, np.zeros(arch.param_shape))
        np.testing.assert_allclose(np.abs(out.amplitudes), np.eye(8)[0b111])

    def test_fused_rotation_matches_product(self, rng):
        for a, b, c in rng.uniform(-np.pi, np.pi, size=(10, 3)):
            want = _rot(Z, c) @ _rot(Y, b) @ _rot(X, a)
            np.testing.assert_allclose(rotation_matrices([a, b, c]), want, atol=1e-14)

    @pytest.mark.parametrize("n,layers", [(1, 1), (2, 2), (3, 2), (4, 3)])
    def test_matches_dense_oracle(self, n, layers, rng):
        arch = PqcArchitecture(n, layers)
        params = arch.init_params(rng)
        psi = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
        psi /= np.linalg.norm(psi)
        out = apply_pqc(Statevector(n, psi), arch, params)
        np.testing.assert_allclose(out.amplitudes, dense_unitary(arch, params) @ psi, atol=1e-12)

    def test_batched_params_match_single(self, rng):
        arch = PqcArchitecture(3, 2)
        params = rng.uniform(-np.pi, np.pi, size=(5,) + arch.param_shape)
        psi = encode_batch(rng.uniform(size=8), 3)[0]
        batched = run_circuit_batch(psi, params)
        for k in range(5):
            np.testing.assert_allclose(batched[k], run_circuit_batch(psi, params[k]), atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2 ** 31))
    def test_norm_preserved(self, n, layers, seed):
        arch = PqcArchitecture(n, layers)
        r = np.random.default_rng(seed)
        state = encode_amplitude(r.uniform(0.01, 1.0, size=2 ** n), n)
        out = apply_pqc(state, arch, arch.init_params(r))
        assert abs(out.norm() - 1.0) < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            apply_pqc(Statevector.zero(2), PqcArchitecture(2, 1), np.zeros((1, 3, 3)))

    def test_gate_sequence_order(self):
        seq = PqcArchitecture(2, 1).gate_sequence()
        assert seq == [("rx", 0, 0), ("ry", 0, 0), ("rz", 0, 0), ("rx", 0, 1), ("ry", 0, 1), ("rz", 0, 1),
                       ("cnot", 0, 0, 1)]


class TestMeasurement:
    def test_expectation_basis_states(self):
        assert expectation_z(Statevector.zero(2), 0) == 1.0
        assert expectation_z(Statevector(2, np.eye(4)[0b10]), 0) == -1.0
        assert expectation_z(Statevector(2, np.eye(4)[0b10]), 1) == 1.0

    def test_expectation_rx(self):
        for theta in np.linspace(0, np.pi, 7):
            s = apply_pqc(Statevector.zero(1), PqcArchitecture(1, 1), [[[theta, 0, 0]]])
            assert expectation_z(s, 0) == pytest.approx(np.cos(theta), abs=1e-14)

    def test_bad_qubit(self):
        with pytest.raises(QubitIndexError):
            expectation_z(Statevector.zero(2), 2)

    def test_histogram_deterministic_per_seed(self):
        probs = np.full(8, 1 / 8)
        a = sample_histogram(probs, 500, 7).counts
        b = sample_histogram(probs, 500, 7).counts
        np.testing.assert_array_equal(a, b)
        assert a.sum() == 500

    def test_histogram_chi_square(self):
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        counts = sample_histogram(probs, 20000, 11).counts
        _, pvalue = stats.chisquare(counts, probs * 20000)
        assert pvalue > 1e-3

    def test_histogram_expectation(self):
        h = MeasurementHistogram([3, 1])
        assert h.expectation_z(0) == pytest.approx(0.5)

    def test_shot_variance_is_one_over_m(self):
        # |+> has <Z> = 0 so Var(f_hat) = 1/M
        probs = np.array([0.5, 0.5])
        rng = np.random.default_rng(5)
        m = 400
        est = np.array([sample_histogram(probs, m, rng).expectation_z(0) for _ in range(2000)])
        assert est.var() == pytest.approx(1 / m, rel=0.15)

    def test_invalid_distribution(self):
        with pytest.raises(InvalidProbabilityError):
            sample_histogram([0.5, 0.6], 10)


class TestDepolarizing:
    def test_limits(self):
        probs = basis_probabilities(encode_amplitude([1.0, 2.0, 0.0, 1.0], 2))
        np.testing.assert_allclose(apply_depolarizing(probs, 0.0), probs)
        np.testing.assert_allclose(apply_depolarizing(probs, 1.0), np.full(4, 0.25))

    @given(st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
    def test_scales_expectation(self, p, seed):
        r = np.random.default_rng(seed)
        state = encode_amplitude(r.uniform(0.01, 1.0, size=8), 3)
        probs = basis_probabilities(state)
        mixed = apply_depolarizing(probs, p)
        for q in range(3):
            want = (1 - p) * expectation_z(state, q)
            assert _z_from_probs(mixed, q) == pytest.approx(want, abs=1e-12)

    def test_rejects_bad_p(self):
        with pytest.raises(InvalidProbabilityError):
            apply_depolarizing([1.0, 0.0], 1.5)

    def test_noise_floor(self):
        with pytest.raises(ValueError):
            NoiseConfig(60, LAMBDA_MIN / 2)
        assert NoiseConfig.noiseless().per_gate_lambda == 0.0

    def test_cumulative_p(self):
        cfg = NoiseConfig(None, 0.05)
        assert cfg.cumulative_p(4) == pytest.approx(1 - 0.95 ** 4)
        p = 1 - 0.95 ** 4
        assert cfg.c_of_p(4) == pytest.approx(1 - (1 - p) ** 2)


def _z_from_probs(probs, qubit):
    n = int(np.log2(len(probs)))
    signs = 1 - 2 * ((np.arange(len(probs)) >> (n - 1 - qubit)) & 1)
    return float(signs @ probs)
