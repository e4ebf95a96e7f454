"""Lightweight improved-residual network for inverse tone mapping.

A self-contained numpy implementation: tensor kernels, reverse-mode autodiff,
the network family itself, an image/patch pipeline, a trainer, quality
metrics, and exact parameter/compute accounting.
"""
from .autograd import Parameter, Tape, backward, finite_diff_check
from .model import (IRNetModel, ModelConfig, build, cca_forward, count_macs,
                    count_params, irb_forward, irnet_forward, load_checkpoint,
                    save_checkpoint)
from .tensor_core import ConvWeights, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConvWeights", "IRNetModel", "ModelConfig", "Parameter", "Tape", "Tensor",
    "backward", "build", "cca_forward", "count_macs", "count_params",
    "finite_diff_check", "irb_forward", "irnet_forward", "load_checkpoint",
    "save_checkpoint", "__version__",
]
