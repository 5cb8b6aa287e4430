#include "gptqt/engine.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gptqt {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Nearest-level assignment with no compensation; fills indices and dequant.
void assign_nearest(const TensorF32& w, const std::vector<RowPlan>& plans,
                    std::vector<std::uint8_t>& indices, std::vector<float>& dequant) {
  const std::size_t rows = w.rows(), cols = w.cols();
  indices.assign(rows * cols, 0);
  dequant.assign(rows * cols, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& lv = plans[r].float_levels;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t idx = nearest_level_index(lv, w.at(r, c));
      indices[r * cols + c] = static_cast<std::uint8_t>(idx);
      dequant[r * cols + c] = static_cast<float>(lv[idx]);
    }
  }
}

// Proxy of snapping the original rows straight onto their plan grids (the
// quantity the plan search minimized).
std::vector<double> plan_proxy_per_row(const TensorF32& w, const std::vector<RowPlan>& plans,
                                       std::span<const double> hdiag) {
  const std::size_t rows = w.rows(), cols = w.cols();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& lv = plans[r].float_levels;
    double e = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = lv[nearest_level_index(lv, w.at(r, c))] - w.at(r, c);
      e += d * d * (hdiag.empty() ? 1.0 : hdiag[c]);
    }
    out[r] = e;
  }
  return out;
}

std::vector<double> diag_proxy_per_row(const TensorF32& w, const std::vector<float>& dequant,
                                       std::span<const double> hdiag) {
  const std::size_t rows = w.rows(), cols = w.cols();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double e = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(dequant[r * cols + c]) - w.at(r, c);
      e += d * d * (hdiag.empty() ? 1.0 : hdiag[c]);
    }
    out[r] = e;
  }
  return out;
}

// Upper Cholesky factor of H^-1 for a column permutation of the damped H.
std::vector<double> permuted_hinv_chol(const HessianState& hess,
                                       const std::vector<std::size_t>& perm) {
  const std::size_t k = hess.k();
  Eigen::MatrixXd hp(k, k);
  const auto& h = hess.h();
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) hp(a, b) = h[perm[a] * k + perm[b]];
  Eigen::LLT<Eigen::MatrixXd> llt(hp);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("quantize_layer: permuted Hessian lost positive definiteness");
  Eigen::MatrixXd hinv = llt.solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::LLT<Eigen::MatrixXd> llt_inv(hinv);
  if (llt_inv.info() != Eigen::Success)
    throw std::runtime_error("quantize_layer: permuted H^-1 lost positive definiteness");
  MatrixRM u = llt_inv.matrixL().transpose();
  return std::vector<double>(u.data(), u.data() + k * k);
}

}  // namespace

std::string_view method_name(QuantMethod::Tag tag) {
  switch (tag) {
    case QuantMethod::Tag::RtnLinear: return "rtn";
    case QuantMethod::Tag::GptqLinear: return "gptq";
    case QuantMethod::Tag::GptqMinMse: return "gptq-minmse";
    case QuantMethod::Tag::BcqPlain: return "bcq";
    case QuantMethod::Tag::GptqBcq: return "gptq-bcq";
    case QuantMethod::Tag::Gptqt: return "gptqt";
  }
  return "?";
}

std::optional<QuantMethod::Tag> parse_method(std::string_view name) {
  using Tag = QuantMethod::Tag;
  if (name == "rtn") return Tag::RtnLinear;
  if (name == "gptq") return Tag::GptqLinear;
  if (name == "gptq-minmse") return Tag::GptqMinMse;
  if (name == "bcq") return Tag::BcqPlain;
  if (name == "gptq-bcq") return Tag::GptqBcq;
  if (name == "gptqt") return Tag::Gptqt;
  return std::nullopt;
}

void validate_method(const QuantMethod& m) {
  using Tag = QuantMethod::Tag;
  switch (m.tag) {
    case Tag::RtnLinear:
    case Tag::GptqLinear:
    case Tag::GptqMinMse:
      if (m.bits < 2 || m.bits > 8)
        throw std::invalid_argument("linear quantization needs bits in 2..8");
      if (m.tag == Tag::GptqMinMse && m.clip_grid < 1)
        throw std::invalid_argument("clip_grid must be >= 1");
      break;
    case Tag::BcqPlain:
    case Tag::GptqBcq:
      if (m.bits < 1 || m.bits > 8)
        throw std::invalid_argument("binary coding needs bits in 1..8");
      if (m.als_iters < 0) throw std::invalid_argument("als_iters must be >= 0");
      break;
    case Tag::Gptqt:
      if (m.inter_bits < 2 || m.inter_bits > 6)
        throw std::invalid_argument("intermediate bits must be in 2..6");
      if (m.bits < 1 || m.bits >= m.inter_bits)
        throw std::invalid_argument("final bits must satisfy 1 <= bits < inter_bits");
      if (m.range_bits < 0) throw std::invalid_argument("range_bits must be >= 0");
      if (m.grid_points < 1) throw std::invalid_argument("grid_points must be >= 1");
      break;
  }
}

TensorF32 QuantizedLayer::dequant_tensor() const {
  return TensorF32({rows, cols}, dequant);
}

double QuantizedLayer::weight_mse(const TensorF32& w) const {
  double sq = 0.0;
  for (std::size_t i = 0; i < dequant.size(); ++i) {
    const double d = static_cast<double>(dequant[i]) - w.data[i];
    sq += d * d;
  }
  return sq / static_cast<double>(dequant.size());
}

std::vector<RowPlan> plan_rows(const TensorF32& w, const HessianState& hess,
                               const QuantMethod& m) {
  using Tag = QuantMethod::Tag;
  const std::size_t rows = w.rows(), cols = w.cols();
  std::vector<RowPlan> plans(rows);

  const bool need_hdiag = m.tag == Tag::Gptqt;
  std::vector<double> hdiag;
  if (need_hdiag) hdiag = hess.hdiag();

  switch (m.tag) {
    case Tag::RtnLinear:
    case Tag::GptqLinear:
      for (std::size_t r = 0; r < rows; ++r)
        plans[r] = plan_from_linear(fit_linear({w.row_ptr(r), cols}, m.bits));
      break;
    case Tag::GptqMinMse:
      for (std::size_t r = 0; r < rows; ++r)
        plans[r] = plan_from_linear(minmse_clip_fit({w.row_ptr(r), cols}, m.bits, m.clip_grid));
      break;
    case Tag::BcqPlain:
    case Tag::GptqBcq:
      for (std::size_t r = 0; r < rows; ++r) {
        const BinaryCode code = bcq_als({w.row_ptr(r), cols}, m.bits, m.als_iters);
        plans[r] = plan_from_binary_code(code.alphas);
      }
      break;
    case Tag::Gptqt: {
      PlanConfig cfg;
      cfg.inter_bits = m.inter_bits;
      cfg.bits = m.bits;
      cfg.range_bits = m.range_bits;
      cfg.grid_points = m.grid_points;
      cfg.joint_search = m.joint_search;
      cfg.full_matrix_proxy = m.full_matrix_proxy;
      if (m.shared_codebook) {
        std::vector<LinearParams> params(rows);
        for (std::size_t r = 0; r < rows; ++r)
          params[r] = fit_linear({w.row_ptr(r), cols}, m.inter_bits);
        const Codebook cb =
            search_codebook_shared({w.data.data(), w.data.size()}, rows, cols, hdiag, params,
                                   m.bits);
        for (std::size_t r = 0; r < rows; ++r) {
          if (params[r].scale == 0.0) {
            plans[r] = plan_constant(params[r].zero);
            continue;
          }
          const double s_hat = reexplore_scale({w.row_ptr(r), cols}, hdiag, cb, params[r],
                                               m.range_bits, m.grid_points);
          plans[r] = plan_from_codebook(m.inter_bits, cb, s_hat, params[r].zero);
        }
      } else {
        const std::span<const double> h_full =
            m.full_matrix_proxy ? std::span<const double>(hess.h()) : std::span<const double>();
        for (std::size_t r = 0; r < rows; ++r)
          plans[r] = build_row_plan({w.row_ptr(r), cols}, hdiag, cfg, h_full);
      }
      break;
    }
  }
  return plans;
}

void run_compensated_loop(std::vector<double>& work, std::size_t rows, std::size_t cols,
                          const std::vector<RowPlan>& plans, std::span<const double> u,
                          int block, std::size_t cols_limit,
                          std::vector<std::uint8_t>& indices) {
  if (block < 1) throw std::invalid_argument("run_compensated_loop: block must be >= 1");
  if (u.size() != cols * cols)
    throw std::invalid_argument("run_compensated_loop: factor must be cols x cols");
  indices.assign(rows * cols, 0);
  std::vector<double> errs(rows * block);

  for (std::size_t i0 = 0; i0 < cols_limit; i0 += block) {
    const std::size_t i1 = std::min(i0 + block, cols_limit);
    const std::size_t blk = i1 - i0;
    for (std::size_t q = i0; q < i1; ++q) {
      const double inv_d = 1.0 / u[q * cols + q];
      const double* urow = u.data() + q * cols;
      for (std::size_t r = 0; r < rows; ++r) {
        double* wrow = work.data() + r * cols;
        const auto& lv = plans[r].float_levels;
        const std::size_t idx = nearest_level_index(lv, wrow[q]);
        const double dq = lv[idx];
        const double e = (wrow[q] - dq) * inv_d;
        indices[r * cols + q] = static_cast<std::uint8_t>(idx);
        errs[r * block + (q - i0)] = e;
        wrow[q] = dq;
        for (std::size_t c = q + 1; c < i1; ++c) wrow[c] -= e * urow[c];
      }
    }
    // deferred update of everything past the block
    if (i1 < cols) {
      Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>> e_blk(
          errs.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(blk),
          Eigen::OuterStride<>(block));
      Eigen::Map<const MatrixRM, 0, Eigen::OuterStride<>> u_blk(
          u.data() + i0 * cols + i1, static_cast<Eigen::Index>(blk),
          static_cast<Eigen::Index>(cols - i1), Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
      Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>> w_rest(
          work.data() + i1, static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(cols - i1), Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
      w_rest.noalias() -= e_blk * u_blk;
    }
  }
}

QuantizedLayer quantize_layer(const TensorF32& w, const HessianState& hess,
                              const QuantMethod& m, int block) {
  validate_method(m);
  if (w.ndim() != 2) throw std::invalid_argument("quantize_layer: weights must be 2-D");
  if (!hess.finalized()) throw std::invalid_argument("quantize_layer: Hessian not finalized");
  if (hess.k() != w.cols())
    throw std::invalid_argument("quantize_layer: Hessian size must equal cols");
  if (block < 1) throw std::invalid_argument("quantize_layer: block must be >= 1");

  const std::size_t rows = w.rows(), cols = w.cols();
  QuantizedLayer out;
  out.rows = rows;
  out.cols = cols;

  auto t0 = Clock::now();
  out.plans = plan_rows(w, hess, m);
  out.plan_seconds = seconds_since(t0);

  t0 = Clock::now();
  const bool compensate =
      m.tag != QuantMethod::Tag::RtnLinear && m.tag != QuantMethod::Tag::BcqPlain;
  if (!compensate) {
    assign_nearest(w, out.plans, out.indices, out.dequant);
  } else if (m.actorder) {
    // Stable order by descending damped diagonal; H refactored to match.
    const std::vector<double> hd = hess.hdiag();
    std::vector<std::size_t> perm(cols);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return hd[a] > hd[b]; });
    const std::vector<double> u = permuted_hinv_chol(hess, perm);
    std::vector<double> work(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) work[r * cols + c] = w.at(r, perm[c]);
    std::vector<std::uint8_t> perm_idx;
    run_compensated_loop(work, rows, cols, out.plans, u, block, cols, perm_idx);
    out.indices.assign(rows * cols, 0);
    out.dequant.assign(rows * cols, 0.0f);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        out.indices[r * cols + perm[c]] = perm_idx[r * cols + c];
        out.dequant[r * cols + perm[c]] = static_cast<float>(work[r * cols + c]);
      }
  } else {
    std::vector<double> work(w.data.begin(), w.data.end());
    run_compensated_loop(work, rows, cols, out.plans, hess.hinv_chol(), block, cols,
                         out.indices);
    out.dequant.resize(rows * cols);
    for (std::size_t i = 0; i < work.size(); ++i) out.dequant[i] = static_cast<float>(work[i]);
  }
  out.loop_seconds = seconds_since(t0);

  out.plan_proxy = plan_proxy_per_row(w, out.plans, hess.hdiag());
  out.row_proxy = diag_proxy_per_row(w, out.dequant, hess.hdiag());
  return out;
}

QuantizedLayer rtn_layer(const TensorF32& w, const QuantMethod& m) {
  validate_method(m);
  if (m.tag != QuantMethod::Tag::RtnLinear && m.tag != QuantMethod::Tag::BcqPlain)
    throw std::invalid_argument("rtn_layer: tag must be rtn or bcq");
  if (w.ndim() != 2) throw std::invalid_argument("rtn_layer: weights must be 2-D");

  QuantizedLayer out;
  out.rows = w.rows();
  out.cols = w.cols();
  auto t0 = Clock::now();
  const std::size_t rows = out.rows, cols = out.cols;
  out.plans.resize(rows);
  if (m.tag == QuantMethod::Tag::RtnLinear) {
    for (std::size_t r = 0; r < rows; ++r)
      out.plans[r] = plan_from_linear(fit_linear({w.row_ptr(r), cols}, m.bits));
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      const BinaryCode code = bcq_als({w.row_ptr(r), cols}, m.bits, m.als_iters);
      out.plans[r] = plan_from_binary_code(code.alphas);
    }
  }
  out.plan_seconds = seconds_since(t0);

  t0 = Clock::now();
  assign_nearest(w, out.plans, out.indices, out.dequant);
  out.loop_seconds = seconds_since(t0);
  out.plan_proxy = plan_proxy_per_row(w, out.plans, {});
  out.row_proxy = diag_proxy_per_row(w, out.dequant, {});
  return out;
}

LinearParams minmse_clip_fit(std::span<const float> row, int n, int grid) {
  if (grid < 1) throw std::invalid_argument("minmse_clip_fit: grid must be >= 1");
  const LinearParams base = fit_linear(row, n);
  if (base.scale == 0.0 || grid == 1) return base;

  double lo = row[0], hi = row[0];
  for (float v : row) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  const int maxq = (1 << n) - 1;

  auto clip_mse = [&](const LinearParams& p) {
    double sq = 0.0;
    for (float v : row) {
      const double t = std::clamp(std::round((v - p.zero) / p.scale), 0.0,
                                  static_cast<double>(maxq));
      const double d = p.scale * t + p.zero - v;
      sq += d * d;
    }
    return sq;
  };

  LinearParams best = base;
  double best_mse = clip_mse(base);
  for (int i = grid - 1; i >= 1; --i) {  // gamma descending below 1; ties keep larger gamma
    const double gamma = static_cast<double>(i) / grid;
    LinearParams p;
    p.bits = n;
    p.zero = gamma * lo;
    p.scale = (gamma * hi - gamma * lo) / maxq;
    if (p.scale <= 0.0) continue;
    const double mse = clip_mse(p);
    if (mse < best_mse) {
      best_mse = mse;
      best = p;
    }
  }
  return best;
}

double layer_output_error(const TensorF32& w, const TensorF32& w_dq, const TensorF32& x_val) {
  if (w.dims != w_dq.dims) throw std::invalid_argument("layer_output_error: shape mismatch");
  if (w.cols() != x_val.rows())
    throw std::invalid_argument("layer_output_error: weights cols must equal activation rows");
  const std::size_t rows = w.rows(), cols = w.cols(), ns = x_val.cols();
  Eigen::MatrixXd wd(rows, cols), dd(rows, cols), xd(cols, ns);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      wd(r, c) = w.at(r, c);
      dd(r, c) = w_dq.at(r, c) - wd(r, c);
    }
  for (std::size_t r = 0; r < cols; ++r)
    for (std::size_t c = 0; c < ns; ++c) xd(r, c) = x_val.at(r, c);
  const double denom = (wd * xd).norm();
  if (denom == 0.0)
    throw std::domain_error("layer_output_error: degenerate, ||W X|| == 0");
  return (dd * xd).norm() / denom;
}

double proxy_loss_full(const TensorF32& w, const TensorF32& w_dq, const HessianState& hess) {
  const std::size_t rows = w.rows(), cols = w.cols();
  if (hess.k() != cols) throw std::invalid_argument("proxy_loss_full: Hessian size mismatch");
  const auto& h = hess.h();
  Eigen::Map<const MatrixRM> hm(h.data(), cols, cols);
  Eigen::MatrixXd delta(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      delta(r, c) = static_cast<double>(w_dq.at(r, c)) - w.at(r, c);
  return (delta * hm).cwiseProduct(delta).sum();
}

}  // namespace gptqt
