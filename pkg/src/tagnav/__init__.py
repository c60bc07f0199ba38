"""Fiducial-marker UAV localisation: simulation, multi-marker PnP, Butterworth
smoothing and trajectory-similarity benchmarks."""

__version__ = "0.1.0"
