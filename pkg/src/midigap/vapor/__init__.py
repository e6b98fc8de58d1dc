"""Joint-space path optimisation against DiGaP pose tubes."""
from .kinematics import KinematicChain, load_chain, pose_error

__all__ = ["KinematicChain", "load_chain", "pose_error"]
