"""Queue-wait prediction and run-or-provision recommendation for HPC batch systems."""

from qsage._accel import USE_NUMBA

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "__version__"]
