"""Hot numeric kernels, backend-selected at import time.

See :mod:`advectant.backend` for the selection rules.  Both implementations
share signatures and reduction order; ``benchmarks/bench_kernels.py`` compares
them head to head.
"""

from ..backend import BACKEND

if BACKEND == "numba":
    from .nb_kernels import (
        conv3d_fwd,
        conv3d_grad_k,
        conv3d_grad_x,
        gather,
        gather_grad_pos,
        scatter,
        scatter_grad_pos,
        stencil,
    )
else:
    from .np_kernels import (
        conv3d_fwd,
        conv3d_grad_k,
        conv3d_grad_x,
        gather,
        gather_grad_pos,
        scatter,
        scatter_grad_pos,
        stencil,
    )

__all__ = [
    "conv3d_fwd",
    "conv3d_grad_k",
    "conv3d_grad_x",
    "gather",
    "gather_grad_pos",
    "scatter",
    "scatter_grad_pos",
    "stencil",
]
