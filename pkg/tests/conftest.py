import numpy as np
import pytest

from dpqfl.data import make_synthetic
from dpqfl.fed import FederationConfig
from dpqfl.model import ClassifierConfig
from dpqfl.statevec import LAMBDA_MIN, NoiseConfig, PqcArchitecture

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")


def smoke_federation(seed=0, shots=None, lam=LAMBDA_MIN, num_rounds=10, local_epochs=2, parallelism=1):
    """Two clients, 4 qubits, 2 layers, binary blobs: the desk-scale training task."""
    clf = ClassifierConfig(
        arch=PqcArchitecture(4, 2),
        num_classes=2,
        noise=NoiseConfig(shots, lam),
        learning_rate=0.1,
        batch_size=16,
    )
    return FederationConfig(clf, num_clients=2, num_rounds=num_rounds, local_epochs=local_epochs,
                            master_seed=seed, parallelism=parallelism)


def smoke_data(seed=0, per_class=100):
    return make_synthetic(2, per_class, 16, 4.0, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
