#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gptqt/fuse.hpp"
#include "gptqt/tensor.hpp"

namespace gptqt {

/// Per-group signed partial sums of an activation vector:
/// table[t] = sum_j sigma(t,j) * x[g*group_size + j], sigma = +1 iff bit j of
/// t is set. One table per group of `group_size` consecutive activations; the
/// tail group is zero-padded. Built once per input vector, read-only after.
struct GroupLUT {
  int group_size = 8;
  std::size_t len = 0;                // activation length before padding
  std::vector<double> tables;         // ngroups() * (1 << group_size) entries
  std::uint64_t build_additions = 0;  // float adds spent building the tables

  std::size_t ngroups() const { return (len + group_size - 1) / group_size; }
  std::size_t table_size() const { return std::size_t{1} << group_size; }
  const double* table(std::size_t g) const { return tables.data() + g * table_size(); }
};

/// Builds the group tables by incremental doubling: extending a table over j
/// elements to j+1 costs 2^j additions, 2^group_size - 1 per group in total;
/// the lower half of each level is filled by antisymmetry.
GroupLUT build_lut(std::span<const float> x, int group_size);

/// y_r = beta_r * sum(x) + sum_i alpha_hat[r][i] * (sum_g table_g[bits]).
/// Same arithmetic as dequantize-then-multiply, reordered so each weight bit
/// costs one table lookup per group. group_size 8 indexes tables directly
/// with plane bytes. Output rows are independent; threads > 1 splits them
/// over a shared read-only LUT without changing any result.
std::vector<float> matvec_lut(const PackedBCMatrix& p, std::span<const float> x,
                              int group_size = 8, int threads = 1);

/// Oracle path: dequantize_packed then a dense row-major matvec.
std::vector<float> matvec_reference(const PackedBCMatrix& p, std::span<const float> x);

/// Dense double-accumulated matvec for benchmark baselines.
std::vector<float> matvec_dense(const TensorF32& w, std::span<const float> x);

/// One benchmark measurement.
struct BenchRow {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 0;
  std::string path;       // dense | dequant | lut
  double median_ms = 0.0;
  double ratio_vs_dequant = 0.0;  // >1 means faster than the dequant path
};

/// Times dense / dequantize-then-matvec / LUT matvec on synthetic packed
/// matrices. All three paths are cross-checked numerically (1e-4 relative)
/// before any timing. Deterministic inputs from `seed`. Single-threaded by
/// default for stable numbers; `parallel` fans LUT output rows across cores.
std::vector<BenchRow> bench(const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                            int m, int reps, std::uint64_t seed = 1, bool parallel = false);

/// Synthetic packed matrix with valid structure (used by bench and tests).
PackedBCMatrix random_packed(std::size_t rows, std::size_t cols, int m, std::uint64_t seed);

}  // namespace gptqt
