"""Walsh-Hadamard channel mixers, multiplication-free depthwise convolutions,
and the tooling to benchmark, gradient-check, and train them on a CPU.
"""

from .layers import (
    BatchNorm,
    Bottleneck,
    BottleneckConfig,
    FwhtExpand,
    FwhtProject,
    MfDsConv,
    ReLU6,
    count_params,
    fwht_layer,
)
from .mf_ops import MfKernel, MfVariant, PadMode, mf_depthwise_conv, mf_dot, mf_grad, mf_matmul, mf_scalar
from .tensor import avgpool_channels, concat_channels, pad_channels, slice_channels
from .thresholding import (
    ThresholdParams,
    Variant,
    apply_threshold,
    smooth_threshold,
    soft_threshold,
    weighted_smooth_threshold,
)
from .training import (
    Model,
    TrainConfig,
    build_toy_conv,
    build_toy_fwht,
    cross_entropy,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    sgd_momentum_step,
    train_loop,
)
from .wht import Ordering, Scale, TransformPlan, fwht, hadamard_matrix, naive_wht, sequency_permutation, walsh_matrix

__version__ = "0.1.0"
