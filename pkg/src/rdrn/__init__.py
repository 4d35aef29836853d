"""Recursively defined residual networks for single-image super-resolution."""

__version__ = "0.1.0"

from .model import RDRN, RDRNConfig, ForwardOutput, build_model

__all__ = ["RDRN", "RDRNConfig", "ForwardOutput", "build_model", "__version__"]
