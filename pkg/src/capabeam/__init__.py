"""Beamforming workbench for continuous-aperture-array downlink systems."""

__version__ = "0.1.0"
