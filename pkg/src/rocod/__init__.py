"""Robust contextual outlier detection with local and global expected behavior."""

from . import parallel  # noqa: F401  (configures the numba threading layer first)
