"""Regression models for outcomes on the closed unit interval."""
__version__ = "0.1.0"

from ._accel import HAVE_NUMBA, backend

__all__ = ["HAVE_NUMBA", "backend", "__version__"]
