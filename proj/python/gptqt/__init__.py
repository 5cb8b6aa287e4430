"""Two-step binary-coding weight quantization toolkit.

Quantizes weight matrices in two progressive steps (linear quantization to an
intermediate bit width, then codebook reduction to a binary-coding grid with
scale re-exploration and Hessian error compensation), fuses the result into a
packed binary-coding format, and executes matvecs on the packed form with a
lookup-table kernel.
"""

from ._core import (
    BinaryCode,
    Codebook,
    FusedRow,
    HessianState,
    LinearParams,
    PackedBCMatrix,
    QuantizedLayer,
    RowPlan,
    bcq_als,
    build_row_plan,
    dequantize_packed,
    deserialize,
    enumerate_codebooks,
    fit_linear,
    fuse_plan,
    gen_activations,
    gen_weights,
    greedy_bc,
    layer_output_error,
    matvec_lut,
    matvec_reference,
    minmse_clip_fit,
    pack,
    proxy_loss_full,
    quantize_layer,
    quantize_linear,
    read_tensor,
    reexplore_scale,
    round_to_codebook,
    row_proxy_error,
    rtn_layer,
    search_codebook,
    serialize,
    splitmix64_at,
    write_tensor,
)

__all__ = [
    "BinaryCode",
    "Codebook",
    "FusedRow",
    "HessianState",
    "LinearParams",
    "PackedBCMatrix",
    "QuantizedLayer",
    "RowPlan",
    "bcq_als",
    "build_row_plan",
    "dequantize_packed",
    "deserialize",
    "enumerate_codebooks",
    "fit_linear",
    "fuse_plan",
    "gen_activations",
    "gen_weights",
    "greedy_bc",
    "layer_output_error",
    "matvec_lut",
    "matvec_reference",
    "minmse_clip_fit",
    "pack",
    "proxy_loss_full",
    "quantize_layer",
    "quantize_linear",
    "read_tensor",
    "reexplore_scale",
    "round_to_codebook",
    "row_proxy_error",
    "rtn_layer",
    "search_codebook",
    "serialize",
    "splitmix64_at",
    "write_tensor",
]

__version__ = "0.1.0"
