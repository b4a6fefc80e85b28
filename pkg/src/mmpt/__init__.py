"""Mutex-masked pre-training for periodic crystals."""
import os as _os

# single-threaded BLAS keeps reductions bit-reproducible
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from mmpt.crystal import Crystal, Dataset, load_dataset, save_dataset  # noqa: E402
from mmpt.graph import MultiGraph, build_graph  # noqa: E402
from mmpt.lattice import niggli_reduce  # noqa: E402

__all__ = ["Crystal", "Dataset", "MultiGraph", "build_graph", "load_dataset", "niggli_reduce", "save_dataset"]
__version__ = "0.1.0"
