"""Desk-scale feature fusion attention network for single-image dehazing.

Subpackages:

* :mod:`ffalab.tensor` -- NCHW tensors and tape-based reverse-mode autodiff
* :mod:`ffalab.model` -- attention modules, blocks, groups and the full network
* :mod:`ffalab.haze` -- scattering-model haze synthesis, patches, augmentation
* :mod:`ffalab.metrics` -- PSNR and SSIM
* :mod:`ffalab.trainer` -- L1/Adam/cosine training and checkpoints
* :mod:`ffalab.cli` -- the ``ffalab`` command
"""

from .model import AttentionMaps, ModelConfig, ParamStore, ffa_forward, init_params, param_count
from .tensor import GradTape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AttentionMaps",
    "GradTape",
    "ModelConfig",
    "ParamStore",
    "Tensor",
    "backward",
    "ffa_forward",
    "init_params",
    "param_count",
]
