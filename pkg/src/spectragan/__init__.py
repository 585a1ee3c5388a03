"""Unpaired image translation with spatial and spectral attention.

A self-contained numpy implementation: reverse-mode autodiff tape,
radix-2 FFT with a differentiable adjoint, the three-branch attention
generator, cycle-consistent training, and a spectral/Frechet metric
suite.
"""

from .tensor import Tensor, Tape, backward, grad_check
from .networks import (GenConfig, GeneratorParams, DiscriminatorParams,
                       init_generator, init_discriminator,
                       generator_forward, discriminator_forward, compose_outputs)
from .trainer import TrainConfig, train_loop, save_checkpoint, load_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward", "grad_check",
    "GenConfig", "GeneratorParams", "DiscriminatorParams",
    "init_generator", "init_discriminator",
    "generator_forward", "discriminator_forward", "compose_outputs",
    "TrainConfig", "train_loop", "save_checkpoint", "load_checkpoint",
    "__version__",
]
