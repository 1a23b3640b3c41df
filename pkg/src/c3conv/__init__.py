"""Concentrated-comprehensive convolution blocks with exact cost analysis."""
from .analyzer import (
    CostReport,
    CoverageMap,
    ReceptiveField,
    count_flops,
    count_params,
    coverage_map,
    format_mflops,
    receptive_field,
)
from .blocks import (
    DilationSchedule,
    build_c3_block,
    build_c3_module,
    build_dilated_conv,
    build_ds_dilate_block,
    build_esp_module,
    build_rc3_block,
)
from .config import ModelConfig, load_config, parse_config
from .conv import (
    BatchNormParams,
    ConvSpec,
    PReLUParams,
    batchnorm_backward_frozen,
    batchnorm_forward,
    conv_backward,
    conv_forward,
    depthwise_dilated_forward,
    pointwise_forward,
    prelu_backward,
    prelu_forward,
)
from .graph import BlockGraph, LayerNode, graph_backward, graph_forward, hff_sum
from .oracle import conv_oracle
from .tensor import Shape, add, concat_channels, random_init, zeros

__version__ = "0.1.0"
