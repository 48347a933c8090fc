"""crackseg: lightweight crack segmentation with a from-scratch autodiff core.

Low-rank depthwise-separable conv blocks, a deformable-attention long-range
encoder, staircase fusion decoding, analytic FLOPs/params profiling, and the
training/evaluation stack, all on float64 numpy with numba-accelerated
kernels (pure-numpy fallback via CRACKSEG_BACKEND=numpy).
"""

from .autodiff import Tensor, backward, gradient_check, no_grad
from .backend import backend_name

__all__ = ["Tensor", "backward", "gradient_check", "no_grad", "backend_name"]

__version__ = "0.1.0"
