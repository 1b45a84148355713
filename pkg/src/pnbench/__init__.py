"""Adversarial attack detection with predictive uncertainty: DNN, MC dropout and Prior Networks."""

from .attacks import AttackConfig, AttackOutcome, attack, bim, fgsm, mim
from .config import AttackGrid, DatasetConfig, EvadeGrid, ExperimentConfig, ModelSpec
from .datasets import BoxScaler, Dataset, load_csv, make_gaussian_classes, make_ring_ood
from .estimators import MCDropoutClassifier, PriorNetworkClassifier, SoftmaxClassifier
from .harness import run_all, run_blackbox, run_detection_evading, run_whitebox
from .metrics import DetectionReport, roc
from .models import CategoricalDist, DirichletParams, EnsemblePrediction, Network

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackGrid",
    "AttackOutcome",
    "BoxScaler",
    "CategoricalDist",
    "Dataset",
    "DatasetConfig",
    "DetectionReport",
    "DirichletParams",
    "EnsemblePrediction",
    "EvadeGrid",
    "ExperimentConfig",
    "MCDropoutClassifier",
    "ModelSpec",
    "Network",
    "PriorNetworkClassifier",
    "SoftmaxClassifier",
    "attack",
    "bim",
    "fgsm",
    "load_csv",
    "make_gaussian_classes",
    "make_ring_ood",
    "mim",
    "roc",
    "run_all",
    "run_blackbox",
    "run_detection_evading",
    "run_whitebox",
]
