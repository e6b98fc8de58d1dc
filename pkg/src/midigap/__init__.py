"""Mixtures of discrete-time Gaussian processes for learning and adapting robot skills."""
from .digap import DiGaP, Trajectory, fit
from .errors import MidigapError
from .manifold import ManifoldSpec
from .mixture import MiDiGaP, SkillChain, chain_from_partitions, enumerate_paths, fit_mixture, regress
from .partition import Partition, partition_demos
from .updating import update, update_chain

__version__ = "0.1.0"

__all__ = [
    "DiGaP", "Trajectory", "fit", "MidigapError", "ManifoldSpec", "MiDiGaP", "SkillChain",
    "chain_from_partitions", "enumerate_paths", "fit_mixture", "regress", "Partition",
    "partition_demos", "update", "update_chain", "__version__",
]
