"""Infrared/visible image fusion at desk scale.

Library layout:
    autodiff       reverse-mode tensor engine (float64 verification mode)
    generator      residual CNN stem + channel/spatial transformer fusion
    discriminator  4-stage perceptual nets and feature distances
    losses         windowed SSIM, variance-gated reference selection
    metrics        the nine fusion-quality metrics and CSV reports
    training       desk-scale training loop, overfit check, ablation sweep
    imgio          PGM/PNG grayscale IO, padding, pair discovery
    cli            fuse / train / eval / gradcheck / ablate front end
"""

from .autodiff import (Adam, AdamState, Tensor, adam_step, backward, grad_check,
                       set_verification, verification)
from .errors import (DimensionError, FormatError, InputError, NumericalError,
                     UsageError)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "backward", "grad_check",
    "set_verification", "verification",
    "DimensionError", "FormatError", "InputError", "NumericalError", "UsageError",
]

__version__ = "0.1.0"
