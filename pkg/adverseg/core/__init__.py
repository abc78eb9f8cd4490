"""Core functionality for adverseg: tensors, layers, networks, losses and training.

Submodules are imported directly (``from adverseg.core.training import train``);
the data package depends on ``adverseg.core.rng`` so nothing is re-exported here.
"""
