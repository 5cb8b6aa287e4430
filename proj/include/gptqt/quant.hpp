#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gptqt {

/// First-step linear quantization parameters for one row.
/// dequant(q) = scale * q + zero for integer q in [0, 2^bits - 1].
struct LinearParams {
  int bits = 0;        // n
  double scale = 0.0;  // weight units per integer step; 0 only for constant rows
  double zero = 0.0;   // weight-unit zero point (value of integer 0)
};

/// Subset of the intermediate integer grid retained by the second step,
/// structured as a binary-coding tree: levels = {base + sum_i eps_i*deltas[i]}
/// with eps in {0,1}. All 2^m subset sums are distinct, so every level has a
/// unique bit decomposition.
struct Codebook {
  int base = 0;                  // a >= 0
  std::vector<int> deltas;       // d_1 <= ... <= d_m, all positive
  std::vector<int> levels;       // the 2^m sums, sorted ascending

  int bits() const { return static_cast<int>(deltas.size()); }
};

/// Per-row quantization plan: the final float grid an element may snap to.
/// Grid rows come from the two-step search (codebook on the intermediate
/// grid, re-explored scale); BinaryCoded rows carry raw binary-coding
/// coefficients (baseline methods); Constant rows are degenerate.
struct RowPlan {
  enum class Kind { Grid, BinaryCoded, Constant };
  Kind kind = Kind::Grid;

  int inter_bits = 0;  // n (Grid only)
  int bits = 0;        // m
  double scale = 0.0;  // S_hat (Grid only)
  double zero = 0.0;   // z (Grid); the single level value for Constant
  Codebook codebook;   // Grid only

  // Binary-coding form of the same grid: level(pattern) =
  // fused_beta + sum_i (+-fused_alphas[i]). float_levels are built from this
  // expression, so packed reconstruction is bit-exact against them.
  std::vector<double> fused_alphas;  // non-negative, ascending
  double fused_beta = 0.0;

  std::vector<double> float_levels;          // strictly increasing (deduped)
  std::vector<std::uint8_t> level_patterns;  // per level: bit i set <=> eps_i = +1
  bool degenerate = false;

  std::size_t num_levels() const { return float_levels.size(); }
};

/// Row-plan search configuration.
struct PlanConfig {
  int inter_bits = 5;  // n, first-step bits
  int bits = 3;        // m, final bits (m < n)
  int range_bits = 1;  // scale re-exploration half-width in bits; 0 disables
  int grid_points = 64;
  bool joint_search = false;       // search codebook and scale jointly (ablation)
  bool full_matrix_proxy = false;  // score with the full Hessian quadratic form
};

/// Result of a binary-coding fit: dequant(j) = sum_i alphas[i] * bits[i][j].
struct BinaryCode {
  std::vector<double> alphas;
  std::vector<std::vector<std::int8_t>> bits;  // one +-1 row per alpha
  std::vector<double> mse_history;             // mean squared error per iteration
};

// --- linear quantization -----------------------------------------------------

/// Min/max linear fit: scale = (max-min)/(2^n-1), zero = min.
/// Constant rows yield scale = 0.
LinearParams fit_linear(std::span<const float> row, int n);

/// clamp(round((w - zero)/scale), 0, 2^n - 1); round half away from zero.
/// scale == 0 maps everything to 0.
std::vector<int> quantize_linear(std::span<const float> row, const LinearParams& p);

// --- binary coding baselines -------------------------------------------------

/// Greedy residual fit: b_i = sign(r_{i-1}) with sign(0) = +1,
/// alpha_i = r_{i-1}^T b_i / len.
BinaryCode greedy_bc(std::span<const float> row, int nbits);

/// Alternating optimization from the greedy initialization: exhaustive
/// per-element codeword assignment, then least-squares alphas. Stops early if
/// B^T B goes singular. iters = 0 returns the greedy fit unchanged.
BinaryCode bcq_als(std::span<const float> row, int nbits, int iters);

// --- codebook machinery -------------------------------------------------------

/// All valid codebooks for intermediate bits n and final bits m, in a fixed
/// enumeration order (delta tuples lexicographic, then base ascending), with
/// duplicate level-sets removed. Guard: 1 <= m < n <= 6.
std::vector<Codebook> enumerate_codebooks(int n, int m);

/// Cached, shared enumeration (the table is immutable once built).
const std::vector<Codebook>& codebook_table(int n, int m);

/// Nearest codebook level per value; ties go to the smaller level.
std::vector<int> round_to_codebook(std::span<const int> ints, const Codebook& cb);

/// Index of the nearest level in a sorted grid, ties toward the smaller one.
std::size_t nearest_level_index(std::span<const double> levels, double x);

// --- search objective ----------------------------------------------------------

/// Diagonal-Hessian proxy for the layer output error of quantizing `row`
/// onto `levels`: sum_j (nearest(w_j) - w_j)^2 * hdiag_j.
double row_proxy_error(std::span<const float> row, std::span<const double> levels,
                       std::span<const double> hdiag);

/// Full quadratic form delta * H * delta^T with nearest-level assignment;
/// O(k^2), used for validating the diagonal proxy on small rows.
double row_proxy_error_full(std::span<const float> row, std::span<const double> levels,
                            std::span<const double> h_full);

// --- the two-step search --------------------------------------------------------

/// Best codebook for the row at the base linear scale, by proxy error.
/// Deterministic: first candidate in enumeration order wins ties.
Codebook search_codebook(std::span<const float> row, std::span<const double> hdiag,
                         const LinearParams& p, int m);

/// One codebook shared by a whole layer: minimizes the proxy error summed
/// over rows, each scored at its own base scale. Constant rows are skipped.
/// `w` is rows x cols row-major; params has one base fit per row.
Codebook search_codebook_shared(std::span<const float> w, std::size_t rows, std::size_t cols,
                                std::span<const double> hdiag,
                                std::span<const LinearParams> params, int m);

struct ScaleInterval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Re-exploration interval for a row of value range `wrange` quantized with n
/// intermediate bits: [wrange/(2^(n+r)-1), wrange/(2^(n-r)-1)]. The upper
/// exponent is clamped at 1 bit so the interval stays finite.
ScaleInterval reexplore_interval(double wrange, int n, int range_bits);

/// Grid search for the scale over the re-exploration interval with the
/// codebook fixed; the base scale is always a candidate, so the result never
/// scores worse than p.scale. range_bits = 0 returns p.scale unchanged.
double reexplore_scale(std::span<const float> row, std::span<const double> hdiag,
                       const Codebook& cb, const LinearParams& p, int range_bits,
                       int grid_points);

/// Full per-row pipeline: linear fit, codebook search at the base scale,
/// scale re-exploration, plan assembly. Constant rows short-circuit to a
/// degenerate single-level plan. When cfg.full_matrix_proxy is set, h_full
/// must be the row-major k x k damped Hessian.
RowPlan build_row_plan(std::span<const float> row, std::span<const double> hdiag,
                       const PlanConfig& cfg, std::span<const double> h_full = {});

// --- plan factories --------------------------------------------------------------

RowPlan plan_from_codebook(int n, const Codebook& cb, double scale, double zero);
RowPlan plan_from_linear(const LinearParams& p);
RowPlan plan_from_binary_code(std::span<const double> alphas);
RowPlan plan_constant(double value);

}  // namespace gptqt
