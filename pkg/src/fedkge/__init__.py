"""Personalized federated knowledge-graph embedding with client-wise relation graphs."""
from .config import ExperimentConfig, TrainingConfig
from .federation import RunResult, run
from .kg import ClientKG, FederatedDataset, GlobalRegistry, Triple, build_registry, load_dataset
from .synth import SynthSpec, generate_synthetic

__all__ = [
    "ClientKG",
    "ExperimentConfig",
    "FederatedDataset",
    "GlobalRegistry",
    "RunResult",
    "SynthSpec",
    "TrainingConfig",
    "Triple",
    "build_registry",
    "generate_synthetic",
    "load_dataset",
    "run",
]
__version__ = "0.1.0"
