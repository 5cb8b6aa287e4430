#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "gptqt/engine.hpp"
#include "gptqt/tensor.hpp"

using namespace gptqt;

namespace {

HessianState hessian_from(const TensorF32& x, double damp = 0.01) {
  HessianState s(x.rows());
  s.accumulate(x);
  s.finalize(damp);
  return s;
}

// Exactly diagonal H = 2*diag(c^2) + damping, so U has no off-diagonal mass
// and compensation cannot propagate anywhere.
HessianState diagonal_hessian(const std::vector<float>& c, double damp = 0.01) {
  const std::size_t k = c.size();
  TensorF32 x({k, k}, std::vector<float>(k * k, 0.0f));
  for (std::size_t i = 0; i < k; ++i) x.at(i, i) = c[i];
  return hessian_from(x, damp);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("single-column compensation equals the constrained quadratic minimizer") {
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    const std::size_t k = 2 + trial % 7;  // up to 8
    const TensorF32 x = gen_activations(k, 4 * k, 900 + trial, 0.5f);
    const HessianState hess = hessian_from(x);

    TensorF32 w = gen_weights(1, k, 300 + trial, 1.0f);
    std::vector<RowPlan> plans = {plan_from_linear(fit_linear({w.row_ptr(0), k}, 3))};

    std::vector<double> work(w.data.begin(), w.data.end());
    std::vector<std::uint8_t> idx;
    run_compensated_loop(work, 1, k, plans, hess.hinv_chol(), 128, 1, idx);

    // oracle: fix the quantized coordinate, solve for the rest
    Eigen::MatrixXd h(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) h(a, b) = hess.h()[a * k + b];
    const double dq0 = plans[0].float_levels[nearest_level_index(plans[0].float_levels,
                                                                 w.data[0])];
    const double delta0 = dq0 - static_cast<double>(w.data[0]);
    const Eigen::MatrixXd h_ff = h.block(1, 1, k - 1, k - 1);
    const Eigen::VectorXd h_f0 = h.block(1, 0, k - 1, 1);
    const Eigen::VectorXd delta_f = -h_ff.ldlt().solve(h_f0) * delta0;

    CHECK(work[0] == dq0);
    for (std::size_t j = 1; j < k; ++j) {
      const double expect = static_cast<double>(w.data[j]) + delta_f(j - 1);
      CHECK(std::abs(work[j] - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("with a diagonal Hessian the compensated loop reduces to RTN") {
  const std::size_t rows = 16, cols = 12;
  const TensorF32 w = gen_weights(rows, cols, 21, 1.0f);
  std::vector<float> c(cols);
  for (std::size_t i = 0; i < cols; ++i) c[i] = 0.5f + static_cast<float>(uniform_at(77, i));
  const HessianState hess = diagonal_hessian(c);

  QuantMethod gptq;
  gptq.tag = QuantMethod::Tag::GptqLinear;
  gptq.bits = 3;
  QuantMethod rtn = gptq;
  rtn.tag = QuantMethod::Tag::RtnLinear;

  const QuantizedLayer a = quantize_layer(w, hess, gptq);
  const QuantizedLayer b = quantize_layer(w, hess, rtn);
  CHECK(max_abs_diff(a.dequant, b.dequant) < 1e-5);
}

TEST_CASE("weights already on their grid quantize to themselves") {
  const std::size_t rows = 8, cols = 16;
  TensorF32 w({rows, cols}, std::vector<float>(rows * cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const int q = c < 4 ? static_cast<int>(c) : static_cast<int>(splitmix64_at(50, r * cols + c) % 4);
      w.at(r, c) = static_cast<float>(q) * 0.5f - 1.0f;  // 2-bit grid, extremes present
    }
  const HessianState hess = hessian_from(gen_activations(cols, 64, 9, 0.7f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::GptqLinear;
  m.bits = 2;
  const QuantizedLayer out = quantize_layer(w, hess, m);
  CHECK(max_abs_diff(out.dequant, w.data) == 0.0);
  for (double e : out.row_proxy) CHECK(e == 0.0);
}

TEST_CASE("block size does not change the result") {
  const std::size_t n = 64;
  const TensorF32 w = gen_weights(n, n, 31, 1.0f);
  const HessianState hess = hessian_from(gen_activations(n, 256, 32, 0.6f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::Gptqt;
  m.bits = 3;
  m.inter_bits = 5;
  const QuantizedLayer b1 = quantize_layer(w, hess, m, 1);
  const QuantizedLayer b128 = quantize_layer(w, hess, m, 128);
  double scale = 0.0;
  for (float v : w.data) scale = std::max(scale, std::abs(static_cast<double>(v)));
  CHECK(max_abs_diff(b1.dequant, b128.dequant) < 1e-4 * scale);
}

TEST_CASE("rtn baselines") {
  SUBCASE("an exact 2-bit grid reconstructs") {
    TensorF32 w({1, 4}, {0, 1, 2, 3});
    QuantMethod m;
    m.tag = QuantMethod::Tag::RtnLinear;
    m.bits = 2;
    const QuantizedLayer out = rtn_layer(w, m);
    CHECK(max_abs_diff(out.dequant, w.data) == 0.0);
  }
  SUBCASE("bcq refinement never loses to greedy") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const TensorF32 w = gen_weights(4, 32, 70 + seed, 1.0f);
      QuantMethod m;
      m.tag = QuantMethod::Tag::BcqPlain;
      m.bits = 2;
      m.als_iters = 10;
      const QuantizedLayer als = rtn_layer(w, m);
      double greedy_sq = 0.0;
      for (std::size_t r = 0; r < 4; ++r) {
        const BinaryCode g = greedy_bc({w.row_ptr(r), 32}, 2);
        for (std::size_t j = 0; j < 32; ++j) {
          double v = 0.0;
          for (std::size_t i = 0; i < g.alphas.size(); ++i) v += g.alphas[i] * g.bits[i][j];
          const double d = v - w.at(r, j);
          greedy_sq += d * d;
        }
      }
      CHECK(als.weight_mse(w) <= greedy_sq / 128.0 + 1e-12);
    }
  }
  SUBCASE("tag guard") {
    QuantMethod m;
    m.tag = QuantMethod::Tag::GptqLinear;
    CHECK_THROWS_AS(rtn_layer(TensorF32({1, 2}, {0, 1}), m), std::invalid_argument);
  }
}

TEST_CASE("minmse_clip_fit") {
  SUBCASE("no outliers keeps the full range") {
    const std::vector<float> row = {0, 1, 2, 3};
    const LinearParams p = minmse_clip_fit(row, 2, 100);
    CHECK(p.scale == doctest::Approx(1.0));
    CHECK(p.zero == doctest::Approx(0.0));
  }
  SUBCASE("grid of one is exactly fit_linear") {
    std::vector<float> row(32);
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = static_cast<float>(normal_at(3, i));
    const LinearParams a = minmse_clip_fit(row, 3, 1);
    const LinearParams b = fit_linear(row, 3);
    CHECK(a.scale == b.scale);
    CHECK(a.zero == b.zero);
  }
  SUBCASE("a far outlier makes clipping pay off") {
    std::vector<float> row;
    for (int i = 0; i < 99; ++i)
      row.push_back(static_cast<float>(2.0 * uniform_at(8, i) - 1.0));
    row.push_back(100.0f);
    const int n = 3, grid = 100;
    const LinearParams chosen = minmse_clip_fit(row, n, grid);

    auto mse_of = [&](const LinearParams& p) {
      double sq = 0.0;
      for (float v : row) {
        const double t =
            std::clamp(std::round((v - p.zero) / p.scale), 0.0, double((1 << n) - 1));
        const double d = p.scale * t + p.zero - v;
        sq += d * d;
      }
      return sq;
    };
    const LinearParams full = fit_linear(row, n);
    CHECK(mse_of(chosen) < mse_of(full));
    CHECK(chosen.scale < full.scale);

    // exhaustive oracle over the same gamma grid
    double lo = row[0], hi = row[0];
    for (float v : row) {
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
    double best = mse_of(full);
    for (int i = grid - 1; i >= 1; --i) {
      const double g = double(i) / grid;
      LinearParams p{n, (g * hi - g * lo) / ((1 << n) - 1), g * lo};
      if (p.scale <= 0) continue;
      best = std::min(best, mse_of(p));
    }
    CHECK(mse_of(chosen) == doctest::Approx(best));
  }
}

TEST_CASE("layer_output_error") {
  const TensorF32 w = gen_weights(32, 32, 5, 1.0f);
  const TensorF32 x = gen_activations(32, 16, 6, 0.3f);

  SUBCASE("identical weights give zero") {
    CHECK(layer_output_error(w, w, x) == doctest::Approx(0.0));
  }
  SUBCASE("doubling gives exactly one") {
    TensorF32 w2 = w;
    for (float& v : w2.data) v *= 2.0f;
    CHECK(layer_output_error(w, w2, x) == doctest::Approx(1.0));
  }
  SUBCASE("matches the naive double loop") {
    TensorF32 wq = w;
    for (std::size_t i = 0; i < wq.data.size(); ++i)
      wq.data[i] += static_cast<float>(0.05 * normal_at(7, i));
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t j = 0; j < 16; ++j) {
        double dn = 0.0, dd = 0.0;
        for (std::size_t c = 0; c < 32; ++c) {
          dn += (double(wq.at(r, c)) - w.at(r, c)) * x.at(c, j);
          dd += double(w.at(r, c)) * x.at(c, j);
        }
        num += dn * dn;
        den += dd * dd;
      }
    const double expect = std::sqrt(num) / std::sqrt(den);
    CHECK(layer_output_error(w, wq, x) == doctest::Approx(expect).epsilon(1e-6));
  }
  SUBCASE("zero denominator is reported as degenerate") {
    TensorF32 wz = w;
    for (float& v : wz.data) v = 0.0f;
    CHECK_THROWS_AS(layer_output_error(wz, w, x), std::domain_error);
  }
  SUBCASE("shape mismatches") {
    CHECK_THROWS_AS(layer_output_error(w, w, gen_activations(16, 4, 1, 0.0f)),
                    std::invalid_argument);
  }
}

TEST_CASE("gptq beats rtn on correlated activations (trend)") {
  int wins = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    const TensorF32 w = gen_weights(64, 64, 7000 + seed, 1.0f);
    const HessianState hess = hessian_from(gen_activations(64, 256, 8000 + seed, 0.9f));
    QuantMethod gptq;
    gptq.tag = QuantMethod::Tag::GptqLinear;
    gptq.bits = 3;
    QuantMethod rtn = gptq;
    rtn.tag = QuantMethod::Tag::RtnLinear;
    const double loss_gptq = proxy_loss_full(w, quantize_layer(w, hess, gptq).dequant_tensor(), hess);
    const double loss_rtn = proxy_loss_full(w, quantize_layer(w, hess, rtn).dequant_tensor(), hess);
    if (loss_gptq <= loss_rtn) ++wins;
  }
  CHECK(wins >= 90);
}

TEST_CASE("actorder permutes but still compensates correctly") {
  const std::size_t n = 32;
  const TensorF32 w = gen_weights(n, n, 61, 1.0f);
  const HessianState hess = hessian_from(gen_activations(n, 128, 62, 0.8f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::GptqLinear;
  m.bits = 3;
  QuantMethod ma = m;
  ma.actorder = true;
  const QuantizedLayer plain = quantize_layer(w, hess, m);
  const QuantizedLayer ordered = quantize_layer(w, hess, ma);
  // both must land on plan levels and keep the loss in the same ballpark
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto& lv = ordered.plans[r].float_levels;
      const float v = ordered.dequant[r * n + c];
      bool on_grid = false;
      for (double l : lv) on_grid |= static_cast<float>(l) == v;
      CHECK(on_grid);
    }
  const double lp = proxy_loss_full(w, plain.dequant_tensor(), hess);
  const double lo = proxy_loss_full(w, ordered.dequant_tensor(), hess);
  CHECK(lo < 4.0 * lp + 1e-9);
  CHECK(lp < 4.0 * lo + 1e-9);
}

TEST_CASE("quantize_layer validation") {
  const TensorF32 w = gen_weights(4, 8, 1, 1.0f);
  HessianState open(8);
  open.accumulate(gen_activations(8, 16, 2, 0.0f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::Gptqt;
  CHECK_THROWS_AS(quantize_layer(w, open, m), std::invalid_argument);  // not finalized
  open.finalize(0.01);
  CHECK_NOTHROW(quantize_layer(w, open, m));
  const HessianState wrong = hessian_from(gen_activations(4, 16, 3, 0.0f));
  CHECK_THROWS_AS(quantize_layer(w, wrong, m), std::invalid_argument);

  QuantMethod bad = m;
  bad.bits = 5;
  bad.inter_bits = 5;
  CHECK_THROWS_AS(validate_method(bad), std::invalid_argument);
  QuantMethod bad2 = m;
  bad2.inter_bits = 9;
  CHECK_THROWS_AS(validate_method(bad2), std::invalid_argument);
}

TEST_CASE("gptq-bcq freezes ALS grids and then compensates") {
  const std::size_t n = 32;
  const TensorF32 w = gen_weights(n, n, 71, 1.0f);
  const HessianState hess = hessian_from(gen_activations(n, 128, 72, 0.8f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::GptqBcq;
  m.bits = 2;
  m.als_iters = 10;
  const QuantizedLayer comp = quantize_layer(w, hess, m);
  QuantMethod plain = m;
  plain.tag = QuantMethod::Tag::BcqPlain;
  const QuantizedLayer rtn = quantize_layer(w, hess, plain);
  // identical frozen plans (both sides run ALS on the original rows)
  for (std::size_t r = 0; r < n; ++r)
    CHECK(comp.plans[r].float_levels == rtn.plans[r].float_levels);
  // compensation targets the quadratic loss, not the weight MSE
  CHECK(proxy_loss_full(w, comp.dequant_tensor(), hess) <=
        proxy_loss_full(w, rtn.dequant_tensor(), hess));
}

TEST_CASE("shared-codebook layers use one codebook everywhere") {
  const std::size_t n = 24;
  const TensorF32 w = gen_weights(n, n, 81, 1.0f);
  const HessianState hess = hessian_from(gen_activations(n, 96, 82, 0.5f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::Gptqt;
  m.bits = 2;
  m.inter_bits = 4;
  m.shared_codebook = true;
  const QuantizedLayer layer = quantize_layer(w, hess, m);
  const auto& first = layer.plans[0].codebook.levels;
  for (std::size_t r = 1; r < n; ++r) CHECK(layer.plans[r].codebook.levels == first);
  // per-row scales may still differ via re-exploration
  CHECK(layer.plans[0].scale > 0.0);
}

TEST_CASE("joint search and full-matrix proxy run through the engine") {
  const std::size_t n = 12;
  const TensorF32 w = gen_weights(n, n, 83, 1.0f);
  const HessianState hess = hessian_from(gen_activations(n, 64, 84, 0.6f));
  QuantMethod m;
  m.tag = QuantMethod::Tag::Gptqt;
  m.bits = 2;
  m.inter_bits = 4;
  m.joint_search = true;
  CHECK_NOTHROW(quantize_layer(w, hess, m));
  QuantMethod f = m;
  f.joint_search = false;
  f.full_matrix_proxy = true;
  const QuantizedLayer layer = quantize_layer(w, hess, f);
  CHECK(layer.plans.size() == n);
}

TEST_CASE("method names round-trip") {
  for (auto tag : {QuantMethod::Tag::RtnLinear, QuantMethod::Tag::GptqLinear,
                   QuantMethod::Tag::GptqMinMse, QuantMethod::Tag::BcqPlain,
                   QuantMethod::Tag::GptqBcq, QuantMethod::Tag::Gptqt})
    CHECK(parse_method(method_name(tag)) == tag);
  CHECK_FALSE(parse_method("nope").has_value());
}
