"""Pore detection, proximity networks and explainable criticality for 3D tomographic volumes."""

__version__ = "0.1.0"
