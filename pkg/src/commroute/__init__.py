"""Decentralised multi-agent packet routing with learned multi-round
communication: graph generation, a dynamic routing environment, a
recurrent message-passing node model with pluggable aggregation, an
attention-based per-round communication gate, and an independent-DQN
training and evaluation pipeline.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .rng import RngBank
