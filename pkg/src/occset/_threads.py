"""Thread-count control for the numba kernels."""

import numba

# The bundled TBB is too old for numba; prefer OpenMP, then the portable workqueue.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def set_threads(count: int) -> int:
    """Use ``count`` worker threads (clamped to what numba was started with)."""
    count = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(count)
    return count


def get_threads() -> int:
    return numba.get_num_threads()
