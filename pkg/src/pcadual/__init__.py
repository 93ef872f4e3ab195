"""Dual processes, exact duality checks and ergodicity criteria for
nearest-neighbour probabilistic cellular automata."""

import numba

# skip probing an outdated TBB; replicas are keyed, so the layer never changes results
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
