"""Planar visual servoing: classical IBVS and a learned Q-network controller."""

__version__ = "0.1.0"
