"""Dynamic MRI reconstruction by domain-conditioned diffusion sampling.

Submodules: ``tensor`` (arrays, FFTs, file format), ``encoding`` (A = MFS),
``phantom``, ``sampling`` (masks, radial acquisition, binning), ``grog``,
``priors``, ``cg``, ``diffusion``, ``metrics`` and ``cli``.
"""

from .cg import CGConfig, cg_refine, cs_reconstruct
from .diffusion import DCConfig, NoiseSchedule, cosine_schedule, sample
from .encoding import EncodingOperator, SamplingMask, adjoint, forward
from .metrics import evaluate, nmse, psnr, ssim, tenengrad
from .phantom import PhantomSpec, dynamic_phantom, synth_coilmaps
from .priors import KtKernel, OraclePredictor, PriorStack, XfSoftPrior, ZeroPredictor
from .sampling import MaskSpec, make_vd_mask
from .tensor import fft2c, ifft2c, load_cplx, save_cplx

__version__ = "0.1.0"

__all__ = [
    "CGConfig", "cg_refine", "cs_reconstruct",
    "DCConfig", "NoiseSchedule", "cosine_schedule", "sample",
    "EncodingOperator", "SamplingMask", "adjoint", "forward",
    "evaluate", "nmse", "psnr", "ssim", "tenengrad",
    "PhantomSpec", "dynamic_phantom", "synth_coilmaps",
    "KtKernel", "OraclePredictor", "PriorStack", "XfSoftPrior", "ZeroPredictor",
    "MaskSpec", "make_vd_mask",
    "fft2c", "ifft2c", "load_cplx", "save_cplx",
]
