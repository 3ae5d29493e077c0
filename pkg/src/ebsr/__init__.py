"""Binary neural networks for image super-resolution with bit-packed XNOR inference.

``EBSR_NUM_THREADS`` caps the BLAS thread pool; it must be set before
``numpy`` is first imported, which importing this package does.
"""
import os as _os

if "EBSR_NUM_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["EBSR_NUM_THREADS"])

from .binarization import LsqQuantizer, RSignParams, rsign_backward, rsign_forward  # noqa: E402
from .bitconv import ConvSpec, fp_conv2d, reference_signed_conv2d, xnor_conv2d  # noqa: E402
from .blocks import BasicBlock, ChannelShiftRescale, EConv, SpatialRescale  # noqa: E402
from .cost import compare_to_published, count_model  # noqa: E402
from .evaluation import MetricConfig, activation_stats, bicubic_resize, evaluate_dataset, psnr, ssim  # noqa: E402
from .network import Model, ModelConfig, build_model, load_checkpoint, save_checkpoint  # noqa: E402
from .tensor import BitTensor, pack_signs, unpack_signs  # noqa: E402
from .training import TrainConfig, grad_check, train_loop  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BasicBlock", "BitTensor", "ChannelShiftRescale", "ConvSpec", "EConv", "LsqQuantizer", "MetricConfig",
    "Model", "ModelConfig", "RSignParams", "SpatialRescale", "TrainConfig", "activation_stats",
    "bicubic_resize", "build_model", "compare_to_published", "count_model", "evaluate_dataset", "fp_conv2d",
    "grad_check", "load_checkpoint", "pack_signs", "psnr", "reference_signed_conv2d", "rsign_backward",
    "rsign_forward", "save_checkpoint", "ssim", "train_loop", "unpack_signs", "xnor_conv2d",
]
