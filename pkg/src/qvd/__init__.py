"""qvd: a post-training-quantization calibration toolkit.

Uniform, power-of-two, and shifted power-of-two quantizers with min/max and
MSE calibration; a temporal-discriminability score and a joint (scale, shift)
grid search for skewed temporal features; per-channel range integration with
zero-overhead folding into a normalization/linear pair; synthetic diagnostic
data generators; and a model footprint estimator. The ``qvd`` console script
wires everything into reproducible, seeded runs.
"""

from .errors import (
    ArgumentError,
    DegenerateInputError,
    DegenerateRangeError,
    QvdError,
    ReportSchemaError,
    SearchError,
    TensorFormatError,
)
from .footprint import (
    FootprintEstimate,
    LayerFootprintSpec,
    LayerSpec,
    estimate_footprint,
    footprint_spec_from_json,
)
from .harness import (
    AffineBlockSpec,
    BlockQuantConfig,
    FramesSpec,
    InterChannelSpec,
    SkewedTemporalSpec,
    ToyBlock,
    ToyBlockSpec,
    gen_affine_block,
    gen_frames,
    gen_interchannel,
    gen_skewed_trajectory,
    gen_toy_block,
    perturb_outliers,
    perturb_zero_interval,
    run_block,
    temporal_inject,
)
from .quantizers import (
    HiDiParams,
    Log2Params,
    QuantizedTensor,
    UniformChannelParams,
    UniformParams,
    calibrate_minmax,
    calibrate_mse_uniform,
    fake_quant_minmax_channel,
    fake_quant_uniform,
    hidi_dequant,
    hidi_quant,
    log2_dequant,
    log2_quant,
    mse_sweep_uniform,
    params_from_json,
    params_to_json,
    uniform_dequant,
    uniform_quant,
)
from .scri import (
    AffineBlock,
    ScriScale,
    ScriSearchResult,
    apply_scri,
    block_activations,
    block_forward,
    compute_scri_scale,
    fold_scri,
    load_block,
    quantized_block_forward,
    save_block,
    scale_from_json,
    scale_to_json,
    search_t,
)
from .temporal import (
    HtdqSearchConfig,
    HtdqSearchResult,
    TemporalTrajectory,
    composite_k,
    hidi_roundtrip,
    load_trajectory,
    log_transform,
    save_trajectory,
    search_hidi_params,
    tdscore,
)
from .tensor import (
    ChannelStats,
    Tensor,
    channel_stats,
    cosine_similarity,
    coverage_ratio,
    mse,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"
