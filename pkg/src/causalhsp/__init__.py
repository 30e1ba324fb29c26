"""Causal-driver portfolio construction: driver selection, sensitivity geometry and allocation."""

from .errors import CausalHSPError

__version__ = "0.1.0"

__all__ = ["CausalHSPError", "__version__"]
