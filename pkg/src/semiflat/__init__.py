"""Numerical workbench for Hermitian-Yang-Mills connections on semi-flat
Kahler 4-tori, their small-fiber limits, and the dual-torus multisections
they induce."""

__version__ = "0.1.0"
