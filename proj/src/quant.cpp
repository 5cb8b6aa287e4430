#include "gptqt/quant.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace gptqt {

namespace {

struct MinMax {
  double lo, hi;
};

MinMax row_minmax(std::span<const float> row) {
  double lo = row[0], hi = row[0];
  for (float v : row) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  return {lo, hi};
}

bool subset_sums_distinct(const std::vector<int>& deltas) {
  const std::size_t n = std::size_t{1} << deltas.size();
  std::vector<int> sums(n, 0);
  for (std::size_t mask = 1; mask < n; ++mask) {
    const int low = std::countr_zero(mask);
    sums[mask] = sums[mask & (mask - 1)] + deltas[low];
  }
  std::sort(sums.begin(), sums.end());
  return std::adjacent_find(sums.begin(), sums.end()) == sums.end();
}

std::vector<int> codebook_levels(int base, const std::vector<int>& deltas) {
  const std::size_t n = std::size_t{1} << deltas.size();
  std::vector<int> lv(n, base);
  for (std::size_t mask = 1; mask < n; ++mask) {
    const int low = std::countr_zero(mask);
    lv[mask] = lv[mask & (mask - 1)] + deltas[low];
  }
  std::sort(lv.begin(), lv.end());
  return lv;
}

// Precomputed per-row state for scoring many integer-level candidates at a
// fixed (scale, zero): elements sorted by value with prefix sums, plus a cut
// table mapping each half-integer grid position to the first element above
// it. Scoring one codebook is then O(2^m) instead of O(len).
class GridScorer {
public:
  GridScorer(std::span<const float> row, std::span<const double> hdiag, const LinearParams& p)
      : scale_(p.scale), zero_(p.zero) {
    const std::size_t len = row.size();
    std::vector<std::size_t> order(len);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });

    ph_.resize(len + 1, 0.0);
    phw_.resize(len + 1, 0.0);
    phw2_.resize(len + 1, 0.0);
    sorted_w_.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      const double w = row[order[i]];
      const double h = hdiag[order[i]];
      sorted_w_[i] = w;
      ph_[i + 1] = ph_[i] + h;
      phw_[i + 1] = phw_[i] + h * w;
      phw2_[i + 1] = phw2_[i] + h * w * w;
    }

    const int maxint = (1 << p.bits) - 1;
    cut_.resize(2 * maxint + 1);
    std::size_t pos = 0;
    for (int c = 0; c <= 2 * maxint; ++c) {
      // first element with (w - zero)/scale > c/2, i.e. w > scale*c/2 + zero
      const double bound = scale_ * (0.5 * c) + zero_;
      while (pos < len && sorted_w_[pos] <= bound) ++pos;
      cut_[c] = pos;
    }
  }

  // Weighted squared error of snapping the row to the integer levels `lv`
  // (sorted ascending) at the scorer's scale/zero. Ties at segment midpoints
  // resolve to the smaller level; equal distance means equal error, so the
  // argmin is unaffected in any case.
  double score(const std::vector<int>& lv) const {
    double err = 0.0;
    std::size_t lo = 0;
    const std::size_t len = sorted_w_.size();
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const std::size_t hi = (i + 1 < lv.size()) ? cut_[lv[i] + lv[i + 1]] : len;
      const double f = scale_ * lv[i] + zero_;
      err += (phw2_[hi] - phw2_[lo]) - 2.0 * f * (phw_[hi] - phw_[lo]) +
             f * f * (ph_[hi] - ph_[lo]);
      lo = hi;
    }
    return err;
  }

private:
  double scale_, zero_;
  std::vector<double> sorted_w_, ph_, phw_, phw2_;
  std::vector<std::size_t> cut_;
};

// Binary-coding coefficients equivalent to the affine grid scale*level+zero:
// alpha_i = scale * d_i / 2, beta = scale * (a + sum(d)/2) + zero.
void grid_fused_coeffs(const Codebook& cb, double scale, double zero,
                       std::vector<double>& alphas, double& beta) {
  alphas.clear();
  int dsum = 0;
  for (int d : cb.deltas) {
    alphas.push_back(scale * d * 0.5);
    dsum += d;
  }
  beta = scale * (cb.base + dsum * 0.5) + zero;
}

// All 2^m reconstruction values with their sign patterns, sorted by value.
// Every float grid in this module is materialized through this one routine so
// search, plan assembly and packed reconstruction agree bit-for-bit.
std::vector<std::pair<double, std::uint8_t>> fused_level_pairs(std::span<const double> alphas,
                                                               double beta) {
  const std::size_t nl = std::size_t{1} << alphas.size();
  std::vector<std::pair<double, std::uint8_t>> lv(nl);
  for (std::size_t mask = 0; mask < nl; ++mask) {
    double v = beta;
    for (std::size_t i = 0; i < alphas.size(); ++i)
      v += (mask >> i & 1) ? alphas[i] : -alphas[i];
    lv[mask] = {v, static_cast<std::uint8_t>(mask)};
  }
  std::sort(lv.begin(), lv.end());
  return lv;
}

std::vector<double> levels_at_scale(const Codebook& cb, double scale, double zero) {
  std::vector<double> alphas;
  double beta = 0.0;
  grid_fused_coeffs(cb, scale, zero, alphas, beta);
  const auto pairs = fused_level_pairs(alphas, beta);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [v, pat] : pairs) out.push_back(v);
  return out;
}

std::vector<double> scale_candidates(const ScaleInterval& iv, int grid_points) {
  std::vector<double> cand;
  cand.reserve(static_cast<std::size_t>(grid_points));
  if (grid_points == 1) {
    cand.push_back(iv.lo);
  } else {
    const double step = (iv.hi - iv.lo) / (grid_points - 1);
    for (int g = 0; g < grid_points; ++g) cand.push_back(iv.lo + step * g);
  }
  return cand;
}

}  // namespace

LinearParams fit_linear(std::span<const float> row, int n) {
  if (row.empty()) throw std::invalid_argument("fit_linear: empty row");
  if (n < 2 || n > 8) throw std::invalid_argument("fit_linear: bits must be in 2..8");
  const auto [lo, hi] = row_minmax(row);
  LinearParams p;
  p.bits = n;
  p.zero = lo;
  p.scale = (hi - lo) / static_cast<double>((1 << n) - 1);
  return p;
}

std::vector<int> quantize_linear(std::span<const float> row, const LinearParams& p) {
  const int maxq = (1 << p.bits) - 1;
  std::vector<int> q(row.size(), 0);
  if (p.scale == 0.0) return q;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double t = std::round((row[i] - p.zero) / p.scale);
    q[i] = static_cast<int>(std::clamp(t, 0.0, static_cast<double>(maxq)));
  }
  return q;
}

BinaryCode greedy_bc(std::span<const float> row, int nbits) {
  if (row.empty()) throw std::invalid_argument("greedy_bc: empty row");
  if (nbits < 1) throw std::invalid_argument("greedy_bc: nbits must be >= 1");
  const std::size_t len = row.size();
  std::vector<double> r(row.begin(), row.end());
  BinaryCode out;
  for (int i = 0; i < nbits; ++i) {
    std::vector<std::int8_t> b(len);
    double dot = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      b[j] = r[j] >= 0.0 ? 1 : -1;  // sign(0) = +1
      dot += r[j] * b[j];
    }
    const double alpha = dot / static_cast<double>(len);
    for (std::size_t j = 0; j < len; ++j) r[j] -= alpha * b[j];
    out.alphas.push_back(alpha);
    out.bits.push_back(std::move(b));
  }
  double sq = 0.0;
  for (double v : r) sq += v * v;
  out.mse_history.push_back(sq / static_cast<double>(len));
  return out;
}

BinaryCode bcq_als(std::span<const float> row, int nbits, int iters) {
  if (iters < 0) throw std::invalid_argument("bcq_als: iters must be >= 0");
  BinaryCode code = greedy_bc(row, nbits);
  const std::size_t len = row.size();
  const std::size_t ncodes = std::size_t{1} << nbits;

  auto mse = [&]() {
    double sq = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      double v = 0.0;
      for (int i = 0; i < nbits; ++i) v += code.alphas[i] * code.bits[i][j];
      const double d = row[j] - v;
      sq += d * d;
    }
    return sq / static_cast<double>(len);
  };

  std::vector<double> codeword(ncodes);
  for (int it = 0; it < iters; ++it) {
    // (a) exhaustive per-element codeword assignment
    for (std::size_t mask = 0; mask < ncodes; ++mask) {
      double v = 0.0;
      for (int i = 0; i < nbits; ++i) v += (mask >> i & 1) ? code.alphas[i] : -code.alphas[i];
      codeword[mask] = v;
    }
    for (std::size_t j = 0; j < len; ++j) {
      std::size_t best = 0;
      double bestd = std::abs(row[j] - codeword[0]);
      for (std::size_t mask = 1; mask < ncodes; ++mask) {
        const double d = std::abs(row[j] - codeword[mask]);
        if (d < bestd) {
          bestd = d;
          best = mask;
        }
      }
      for (int i = 0; i < nbits; ++i) code.bits[i][j] = (best >> i & 1) ? 1 : -1;
    }

    // (b) least-squares alphas for the fixed bits
    Eigen::MatrixXd btb(nbits, nbits);
    Eigen::VectorXd btw(nbits);
    for (int a = 0; a < nbits; ++a) {
      for (int b = a; b < nbits; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          s += static_cast<double>(code.bits[a][j]) * code.bits[b][j];
        btb(a, b) = s;
        btb(b, a) = s;
      }
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += static_cast<double>(code.bits[a][j]) * row[j];
      btw(a) = s;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(btb);
    if (!lu.isInvertible()) {
      code.mse_history.push_back(mse());
      break;  // degenerate bit matrix; keep previous alphas
    }
    Eigen::VectorXd alpha = lu.solve(btw);
    for (int i = 0; i < nbits; ++i) code.alphas[i] = alpha(i);
    code.mse_history.push_back(mse());
  }
  return code;
}

std::vector<Codebook> enumerate_codebooks(int n, int m) {
  if (!(1 <= m && m < n && n <= 6))
    throw std::invalid_argument("enumerate_codebooks: need 1 <= m < n <= 6");
  const int maxint = (1 << n) - 1;
  std::vector<Codebook> out;
  std::map<std::vector<int>, bool> seen;

  std::vector<int> deltas(m);
  // delta tuples in lexicographic order, non-decreasing, sum <= maxint
  auto rec = [&](auto&& self, int depth, int prev, int sum) -> void {
    if (depth == m) {
      if (!subset_sums_distinct(deltas)) return;
      for (int a = 0; a + sum <= maxint; ++a) {
        Codebook cb;
        cb.base = a;
        cb.deltas = deltas;
        cb.levels = codebook_levels(a, deltas);
        if (seen.emplace(cb.levels, true).second) out.push_back(std::move(cb));
      }
      return;
    }
    for (int d = prev; sum + d <= maxint; ++d) {
      deltas[depth] = d;
      self(self, depth + 1, d, sum + d);
    }
  };
  rec(rec, 0, 1, 0);
  return out;
}

const std::vector<Codebook>& codebook_table(int n, int m) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::vector<Codebook>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find({n, m});
  if (it == cache.end()) it = cache.emplace(std::make_pair(n, m), enumerate_codebooks(n, m)).first;
  return it->second;
}

std::size_t nearest_level_index(std::span<const double> levels, double x) {
  const auto it = std::lower_bound(levels.begin(), levels.end(), x);
  if (it == levels.begin()) return 0;
  if (it == levels.end()) return levels.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - levels.begin());
  const double d_hi = *it - x;
  const double d_lo = x - *(it - 1);
  return d_lo <= d_hi ? hi - 1 : hi;  // tie -> smaller level
}

std::vector<int> round_to_codebook(std::span<const int> ints, const Codebook& cb) {
  std::vector<int> out(ints.size());
  const auto& lv = cb.levels;
  for (std::size_t i = 0; i < ints.size(); ++i) {
    const auto it = std::lower_bound(lv.begin(), lv.end(), ints[i]);
    if (it == lv.begin()) {
      out[i] = lv.front();
    } else if (it == lv.end()) {
      out[i] = lv.back();
    } else {
      const int d_hi = *it - ints[i];
      const int d_lo = ints[i] - *(it - 1);
      out[i] = d_lo <= d_hi ? *(it - 1) : *it;
    }
  }
  return out;
}

double row_proxy_error(std::span<const float> row, std::span<const double> levels,
                       std::span<const double> hdiag) {
  if (row.size() != hdiag.size())
    throw std::invalid_argument("row_proxy_error: row/hdiag length mismatch");
  double err = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double d = levels[nearest_level_index(levels, row[j])] - row[j];
    err += d * d * hdiag[j];
  }
  return err;
}

double row_proxy_error_full(std::span<const float> row, std::span<const double> levels,
                            std::span<const double> h_full) {
  const std::size_t k = row.size();
  if (h_full.size() != k * k)
    throw std::invalid_argument("row_proxy_error_full: H must be k x k");
  std::vector<double> delta(k);
  for (std::size_t j = 0; j < k; ++j)
    delta[j] = levels[nearest_level_index(levels, row[j])] - row[j];
  double err = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < k; ++b) s += h_full[a * k + b] * delta[b];
    err += delta[a] * s;
  }
  return err;
}

Codebook search_codebook(std::span<const float> row, std::span<const double> hdiag,
                         const LinearParams& p, int m) {
  if (m >= p.bits) throw std::invalid_argument("search_codebook: need m < intermediate bits");
  const auto& table = codebook_table(p.bits, m);
  const GridScorer scorer(row, hdiag, p);
  std::size_t best = 0;
  double best_err = scorer.score(table[0].levels);
  for (std::size_t i = 1; i < table.size(); ++i) {
    const double e = scorer.score(table[i].levels);
    if (e < best_err) {
      best_err = e;
      best = i;
    }
  }
  return table[best];
}

Codebook search_codebook_shared(std::span<const float> w, std::size_t rows, std::size_t cols,
                                std::span<const double> hdiag,
                                std::span<const LinearParams> params, int m) {
  if (params.size() != rows)
    throw std::invalid_argument("search_codebook_shared: one LinearParams per row required");
  int n = 0;
  std::vector<GridScorer> scorers;
  scorers.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (params[r].scale == 0.0) continue;
    n = params[r].bits;
    scorers.emplace_back(w.subspan(r * cols, cols), hdiag, params[r]);
  }
  if (scorers.empty()) throw std::invalid_argument("search_codebook_shared: all rows constant");
  const auto& table = codebook_table(n, m);
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < table.size(); ++i) {
    double e = 0.0;
    for (const auto& sc : scorers) e += sc.score(table[i].levels);
    if (e < best_err) {
      best_err = e;
      best = i;
    }
  }
  return table[best];
}

ScaleInterval reexplore_interval(double wrange, int n, int range_bits) {
  const int n_hi = n + range_bits;
  const int n_lo = std::max(n - range_bits, 1);  // keep the denominator positive
  ScaleInterval iv;
  iv.lo = wrange / static_cast<double>((1 << n_hi) - 1);
  iv.hi = wrange / static_cast<double>((1 << n_lo) - 1);
  return iv;
}

double reexplore_scale(std::span<const float> row, std::span<const double> hdiag,
                       const Codebook& cb, const LinearParams& p, int range_bits,
                       int grid_points) {
  if (grid_points < 1) throw std::invalid_argument("reexplore_scale: grid_points must be >= 1");
  if (range_bits == 0 || p.scale == 0.0) return p.scale;

  const auto [lo, hi] = row_minmax(row);
  const ScaleInterval iv = reexplore_interval(hi - lo, p.bits, range_bits);

  // Base scale first so the result can never score worse than it.
  double best_s = p.scale;
  double best_err = row_proxy_error(row, levels_at_scale(cb, p.scale, p.zero), hdiag);
  for (double s : scale_candidates(iv, grid_points)) {
    const double e = row_proxy_error(row, levels_at_scale(cb, s, p.zero), hdiag);
    if (e < best_err) {
      best_err = e;
      best_s = s;
    }
  }
  return best_s;
}

RowPlan build_row_plan(std::span<const float> row, std::span<const double> hdiag,
                       const PlanConfig& cfg, std::span<const double> h_full) {
  if (cfg.bits >= cfg.inter_bits)
    throw std::invalid_argument("build_row_plan: need bits < inter_bits");
  const LinearParams p = fit_linear(row, cfg.inter_bits);
  if (p.scale == 0.0) return plan_constant(p.zero);

  auto proxy = [&](const std::vector<double>& levels) {
    return cfg.full_matrix_proxy ? row_proxy_error_full(row, levels, h_full)
                                 : row_proxy_error(row, levels, hdiag);
  };

  std::vector<double> cands{p.scale};
  if (cfg.range_bits > 0) {
    const auto [lo, hi] = row_minmax(row);
    const ScaleInterval iv = reexplore_interval(hi - lo, cfg.inter_bits, cfg.range_bits);
    for (double s : scale_candidates(iv, cfg.grid_points)) cands.push_back(s);
  }

  if (cfg.joint_search || cfg.full_matrix_proxy) {
    // Exhaustive scan with the requested objective. Joint search scores every
    // (codebook, scale) pair; otherwise the two stages stay sequential.
    const auto& table = codebook_table(cfg.inter_bits, cfg.bits);
    const Codebook* best_cb = &table[0];
    double best_err = std::numeric_limits<double>::infinity();
    if (cfg.joint_search) {
      double best_s = cands[0];
      for (const Codebook& cb : table) {
        for (double s : cands) {
          const double e = proxy(levels_at_scale(cb, s, p.zero));
          if (e < best_err) {
            best_err = e;
            best_cb = &cb;
            best_s = s;
          }
        }
      }
      return plan_from_codebook(cfg.inter_bits, *best_cb, best_s, p.zero);
    }
    for (const Codebook& cb : table) {
      const double e = proxy(levels_at_scale(cb, p.scale, p.zero));
      if (e < best_err) {
        best_err = e;
        best_cb = &cb;
      }
    }
    double best_s = cands[0];
    best_err = std::numeric_limits<double>::infinity();
    for (double s : cands) {
      const double e = proxy(levels_at_scale(*best_cb, s, p.zero));
      if (e < best_err) {
        best_err = e;
        best_s = s;
      }
    }
    return plan_from_codebook(cfg.inter_bits, *best_cb, best_s, p.zero);
  }

  const Codebook cb = search_codebook(row, hdiag, p, cfg.bits);
  const double s_hat = reexplore_scale(row, hdiag, cb, p, cfg.range_bits, cfg.grid_points);
  return plan_from_codebook(cfg.inter_bits, cb, s_hat, p.zero);
}

namespace {

// Materializes float_levels and level_patterns from the fused coefficients.
// Equal-valued levels collapse to the first pattern producing them.
void fill_levels_from_fused(RowPlan& plan) {
  plan.float_levels.clear();
  plan.level_patterns.clear();
  for (auto& [v, pat] : fused_level_pairs(plan.fused_alphas, plan.fused_beta)) {
    if (!plan.float_levels.empty() && v == plan.float_levels.back()) continue;
    plan.float_levels.push_back(v);
    plan.level_patterns.push_back(pat);
  }
}

}  // namespace

RowPlan plan_from_codebook(int n, const Codebook& cb, double scale, double zero) {
  RowPlan plan;
  plan.kind = RowPlan::Kind::Grid;
  plan.inter_bits = n;
  plan.bits = cb.bits();
  plan.scale = scale;
  plan.zero = zero;
  plan.codebook = cb;
  grid_fused_coeffs(cb, scale, zero, plan.fused_alphas, plan.fused_beta);
  fill_levels_from_fused(plan);
  return plan;
}

RowPlan plan_from_linear(const LinearParams& p) {
  if (p.scale == 0.0) return plan_constant(p.zero);
  Codebook cb;
  cb.base = 0;
  for (int i = 0; i < p.bits; ++i) cb.deltas.push_back(1 << i);
  cb.levels = codebook_levels(0, cb.deltas);
  return plan_from_codebook(p.bits, cb, p.scale, p.zero);
}

RowPlan plan_from_binary_code(std::span<const double> alphas) {
  RowPlan plan;
  plan.kind = RowPlan::Kind::BinaryCoded;
  plan.bits = static_cast<int>(alphas.size());
  // Fold negative coefficients into the bit sense and sort ascending; the
  // representable level set is unchanged.
  std::vector<double> a(alphas.begin(), alphas.end());
  for (double& v : a) v = std::abs(v);
  std::sort(a.begin(), a.end());
  plan.fused_alphas = std::move(a);
  plan.fused_beta = 0.0;
  fill_levels_from_fused(plan);
  return plan;
}

RowPlan plan_constant(double value) {
  RowPlan plan;
  plan.kind = RowPlan::Kind::Constant;
  plan.zero = value;
  plan.degenerate = true;
  plan.fused_beta = value;
  plan.float_levels = {value};
  plan.level_patterns = {0};
  return plan;
}

}  // namespace gptqt
