#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gptqt/calib.hpp"
#include "gptqt/quant.hpp"
#include "gptqt/tensor.hpp"

namespace gptqt {

/// Quantizer variant plus its knobs. The tag selects which per-row planner
/// supplies the level grids; the compensated column loop is shared.
struct QuantMethod {
  enum class Tag { RtnLinear, GptqLinear, GptqMinMse, BcqPlain, GptqBcq, Gptqt };
  Tag tag = Tag::Gptqt;

  int bits = 3;        // m, final bits
  int inter_bits = 5;  // n, first-step bits (gptqt)
  int range_bits = 1;  // scale re-exploration width (gptqt)
  int grid_points = 64;
  int als_iters = 10;  // bcq refinement iterations
  int clip_grid = 100; // min-MSE clip search grid

  bool actorder = false;          // process columns by descending diag(H)
  bool joint_search = false;      // gptqt: joint codebook x scale search
  bool shared_codebook = false;   // gptqt: one codebook per layer
  bool full_matrix_proxy = false; // gptqt: full-Hessian scoring (small rows)
};

std::string_view method_name(QuantMethod::Tag tag);
std::optional<QuantMethod::Tag> parse_method(std::string_view name);

/// Throws std::invalid_argument if the configuration is inconsistent
/// (e.g. m >= n for the two-step method).
void validate_method(const QuantMethod& m);

/// Result of quantizing one layer.
struct QuantizedLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<RowPlan> plans;         // one per row
  std::vector<std::uint8_t> indices;  // rows x cols, index into float_levels
  std::vector<float> dequant;         // rows x cols dequantized weights
  std::vector<double> plan_proxy;     // per-row proxy of the frozen plan (the search objective)
  std::vector<double> row_proxy;      // per-row proxy of the final result vs original W
  double plan_seconds = 0.0;
  double loop_seconds = 0.0;

  TensorF32 dequant_tensor() const;
  double weight_mse(const TensorF32& w) const;
};

/// Per-row plans for the given method, computed from the original weights.
std::vector<RowPlan> plan_rows(const TensorF32& w, const HessianState& hess,
                               const QuantMethod& m);

/// The GPTQ column loop, exposed for oracle tests. `work` holds the current
/// weights (rows x cols, row-major, mutated in place); `u` is the upper
/// Cholesky factor of H^-1. Columns [0, cols_limit) are quantized left to
/// right in blocks, each snap's error is scaled by 1/U[q,q] and propagated to
/// the still-unquantized columns through row q of U. Columns past cols_limit
/// receive compensation but keep their (adjusted) full-precision values.
void run_compensated_loop(std::vector<double>& work, std::size_t rows, std::size_t cols,
                          const std::vector<RowPlan>& plans, std::span<const double> u,
                          int block, std::size_t cols_limit,
                          std::vector<std::uint8_t>& indices);

/// Full layer quantization: freeze per-row plans from the original weights,
/// then run the compensated column loop (except for the RTN/BCQ baselines,
/// which round without compensation).
QuantizedLayer quantize_layer(const TensorF32& w, const HessianState& hess,
                              const QuantMethod& m, int block = 128);

/// Round-to-nearest baseline: per-row plans, no compensation, no Hessian.
/// Accepts RtnLinear and BcqPlain tags; row_proxy holds the unweighted
/// squared error.
QuantizedLayer rtn_layer(const TensorF32& w, const QuantMethod& m);

/// Linear fit with the clipping range shrunk by the best symmetric factor
/// gamma in (0,1] (gamma scales both row extremes); minimizes unweighted
/// round-trip MSE. Ties prefer the larger gamma; grid = 1 degenerates to
/// fit_linear.
LinearParams minmse_clip_fit(std::span<const float> row, int n, int grid);

/// || (W_dq - W) X ||_F / || W X ||_F. Throws std::domain_error when the
/// denominator vanishes.
double layer_output_error(const TensorF32& w, const TensorF32& w_dq, const TensorF32& x_val);

/// tr(Delta * H * Delta^T) with Delta = W_dq - W and H the damped Hessian:
/// the quadratic loss the compensation loop is minimizing.
double proxy_loss_full(const TensorF32& w, const TensorF32& w_dq, const HessianState& hess);

}  // namespace gptqt
