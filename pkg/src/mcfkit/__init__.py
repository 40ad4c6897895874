"""Toolkit for multi-core-fiber multi-port beamsplitter experiments:
linear-optics math, process tomography, protocol simulation and
measurement-device-independent randomness certification."""

from . import certify, linops, sdp, simulate, tomography

__all__ = ["certify", "linops", "sdp", "simulate", "tomography"]
