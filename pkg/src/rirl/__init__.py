"""Relation-indexed representation learning on multivariate time series.

Invertible per-node autoencoders, relation bridges between cause and
effect latents, and greedy DAG exploration scored by Gaussian KLD gain,
plus a synthetic tiered-DAG generator, metrics, and a CLI.
"""

__version__ = "0.1.0"

from .config import RunConfig, substream
from .dataio import DagSpec, EdgeDef, NodeDef, load_csv, save_csv, synth_generate
from .explore import causal_strength, explore, kld_gain
from .noderepr import NodeAutoencoder, train_node_autoencoder
from .relation import train_micro_causal
from .stats import GaussianStats, gaussian_kld, gaussian_stats

__all__ = [
    "DagSpec", "EdgeDef", "GaussianStats", "NodeAutoencoder", "NodeDef",
    "RunConfig", "causal_strength", "explore", "gaussian_kld",
    "gaussian_stats", "kld_gain", "load_csv", "save_csv", "substream",
    "synth_generate", "train_micro_causal", "train_node_autoencoder",
    "__version__",
]
