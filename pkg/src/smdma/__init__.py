"""Sensitivity-aware model-division multiple access (S-MDMA) simulator.

Desk-scale, deterministic toolkit for two-user semantic image transmission
over a satellite-ground broadcast link: feature fusion, reconstruction
sensitivity sorting and bandwidth cropping, Kronecker orthogonal embedding,
a Shadowed-Rician channel, geometric-mean multi-user training, and an
experiment harness.
"""

__version__ = "0.1.0"
