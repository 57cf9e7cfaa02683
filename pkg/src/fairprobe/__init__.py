"""Biased-neuron interpretation and IDI generation for dense classifiers."""
from . import data, generalize, generate, interpret, metrics, nn, synthetic
from .data import AttributeSchema, Attribute, TabularDataset, load_csv, load_schema
from .errors import FairProbeError
from .generate import GenerationConfig, IDISet, global_generate, local_generate
from .interpret import BiasProfile, bias_profile, profile_from_data
from .nn import Network, TrainConfig, forward, init_network, input_gradient, train

__version__ = "0.1.0"

__all__ = [
    "Attribute", "AttributeSchema", "BiasProfile", "FairProbeError", "GenerationConfig",
    "IDISet", "Network", "TabularDataset", "TrainConfig", "bias_profile", "data", "forward",
    "generalize", "generate", "global_generate", "init_network", "input_gradient", "interpret",
    "load_csv", "load_schema", "local_generate", "metrics", "nn", "profile_from_data",
    "synthetic", "train",
]
