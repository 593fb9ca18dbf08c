"""advectant: Eulerian-Lagrangian point cloud learning.

Particles carry growing feature vectors; each advection step transfers them
to a background grid, convolves a generalized force field, derives a velocity
field, blends PIC/FLIP, and moves the particles.  Built on a small numpy
autodiff core with numba-accelerated kernels (see :mod:`advectant.backend`).
"""

from .advect import AdvectionParams, ParticleSystem, StepParams, advect_step
from .backend import backend_name
from .data import CloudSample, Dataset, normalize
from .grid import GridField, GridSpec, g2p, p2g, p2g_raw, stencil
from .model import (
    ModelConfig,
    ModelParams,
    forward_classify,
    forward_segment,
    loss,
)
from .tensor import Tensor, no_grad, precision, set_default_dtype
from .train import OptimConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "AdvectionParams",
    "CloudSample",
    "Dataset",
    "GridField",
    "GridSpec",
    "ModelConfig",
    "ModelParams",
    "OptimConfig",
    "ParticleSystem",
    "StepParams",
    "Tensor",
    "advect_step",
    "backend_name",
    "evaluate",
    "fit",
    "forward_classify",
    "forward_segment",
    "g2p",
    "loss",
    "no_grad",
    "normalize",
    "p2g",
    "p2g_raw",
    "precision",
    "set_default_dtype",
    "stencil",
]
