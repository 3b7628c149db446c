"""Simulation, coincidence analysis and quantum non-Gaussianity certification
of pulsed entangled photon-pair sources."""

__version__ = "1.0.0"
