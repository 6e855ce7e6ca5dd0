"""Multi-rate CSI compression codec for MIMO-OFDM channel matrices."""

from .channel import (
    ChannelConfig,
    ChannelTensor,
    Scale,
    generate_channel,
    generate_dataset,
    load_tensor_file,
    nmse,
    nmse_db,
    postprocess,
    preprocess,
    save_tensor_file,
)
from .entropy_model import (
    EntropyModelParams,
    PmfTable,
    PmfTableSet,
    bin_probability,
    build_pmf_tables,
    init_params,
    model_cross_entropy,
    rate_nats,
)
from .pipeline import (
    Bitstream,
    CodecModel,
    RateBudget,
    RdPoint,
    bits_per_entry,
    decode_csi,
    encode_csi,
    expected_bits_per_level,
    rd_sweep,
    select_level,
)
from .quantizer import (
    QuantLadder,
    SymbolTensor,
    coarsen,
    dequantize,
    empirical_entropy,
    quantize,
)
from .rans import Payload, decode_symbols, encode_symbols
from .training import TrainConfig, TrainableEntropy, loss_and_gradients, train
from .transforms import (
    SwinConfig,
    TransformParams,
    analyze,
    build_transform,
    count_parameters,
    synthesize,
)
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"
