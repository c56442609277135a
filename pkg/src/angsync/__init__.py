"""Angular synchronization and k-synchronization on offset graphs.

Classical estimators (spectral, row-normalized spectral, generalized power
method), an end-to-end trainable GNN with projected power steps, synthetic
outlier models, and a sensor-network-localization harness.
"""

from .graph import OffsetGraph, build_hermitian, mod2pi, row_normalize
from .kernels import BACKEND
from .metrics import ane, mse, mse_k
from .spectral import gpm, spectral_rn_sync, spectral_sync, trivial_solution
from .synth import SyntheticConfig, gen_offset_graph

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "OffsetGraph", "SyntheticConfig", "ane", "build_hermitian", "gen_offset_graph",
    "gpm", "mod2pi", "mse", "mse_k", "row_normalize", "spectral_rn_sync", "spectral_sync",
    "trivial_solution",
]
