"""Differentially private quantum federated learning on a desk-scale simulator."""
from .accountant import DpBudget, DpParams, VarianceMode
from .attack import AttackConfig, VictimOracle, run_attack
from .data import Dataset, ImageDownscaler, make_synthetic
from .fed import FederatedQuantumClassifier, FederationConfig, train
from .model import ClassifierConfig, QuantumClassifier
from .statevec import INFINITE, NoiseConfig, PqcArchitecture, Statevector

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "ClassifierConfig",
    "Dataset",
    "DpBudget",
    "DpParams",
    "FederatedQuantumClassifier",
    "FederationConfig",
    "INFINITE",
    "ImageDownscaler",
    "NoiseConfig",
    "PqcArchitecture",
    "QuantumClassifier",
    "Statevector",
    "VarianceMode",
    "VictimOracle",
    "make_synthetic",
    "run_attack",
    "train",
]
