#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "gptqt/engine.hpp"
#include "gptqt/quant.hpp"
#include "gptqt/tensor.hpp"

namespace gptqt {

/// One row collapsed to pure binary coding: a level with sign selectors
/// eps_i in {-1,+1} dequantizes to beta + sum_i eps_i * alpha_hat[i].
/// Degenerate (constant) rows fuse to m = 0 with beta carrying the value.
struct FusedRow {
  int m = 0;
  std::vector<double> alpha_hat;  // non-negative, ascending
  double beta = 0.0;
};

/// Collapses a row plan's (scale, zero, codebook) into fused coefficients:
/// alpha_hat[i] = S*d_i/2, beta = S*(a + sum(d)/2) + z for grid plans;
/// binary-coded plans pass their coefficients through.
FusedRow fuse_plan(const RowPlan& plan);

/// Bit-plane packed layer: per-row fused coefficients plus m sign planes per
/// row, each ceil(cols/8) bytes, bit = 1 <=> eps = +1, LSB-first. Rows whose
/// plan uses fewer bits than the matrix width are padded with zero
/// coefficients in front.
struct PackedBCMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int m = 0;
  std::vector<FusedRow> fused;          // size rows, alpha_hat padded to m
  std::vector<std::uint8_t> bitplanes;  // rows * m * plane_stride(), plane-major per row

  std::size_t plane_stride() const { return (cols + 7) / 8; }
  const std::uint8_t* plane(std::size_t row, int bit) const {
    return bitplanes.data() + (row * m + bit) * plane_stride();
  }
  bool bit(std::size_t row, int b, std::size_t col) const {
    return (plane(row, b)[col >> 3] >> (col & 7)) & 1;
  }
};

class PackError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Packs a quantized layer. Every level index must decompose into a unique
/// sign pattern; duplicate subset sums in a codebook surface here as an
/// error.
PackedBCMatrix pack(const QuantizedLayer& layer);

/// Reconstructs the dequantized weights (rows x cols) from the packed form.
TensorF32 dequantize_packed(const PackedBCMatrix& p);

/// GQTQ container, little-endian: magic "GQTQ", u32 version=1, u32 rows,
/// u32 cols, u8 m; per row m x f32 alpha_hat then f32 beta; per row m planes
/// of ceil(cols/8) bytes. Coefficients are stored as f32.
void serialize(const PackedBCMatrix& p, const std::filesystem::path& path);
PackedBCMatrix deserialize(const std::filesystem::path& path);

/// Exact on-disk size of a serialized rows x cols m-bit matrix.
std::size_t packed_file_size(std::size_t rows, std::size_t cols, int m);

}  // namespace gptqt
