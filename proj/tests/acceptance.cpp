// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gptqt/calib.hpp"
#include "gptqt/engine.hpp"
#include "gptqt/fuse.hpp"
#include "gptqt/gemm.hpp"
#include "gptqt/quant.hpp"
#include "gptqt/tensor.hpp"

using namespace gptqt;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& label, bool pass, double secs,
            const std::string& note = "") {
  std::printf("%s  criterion %2d: %s (%.2fs)%s%s\n", pass ? "PASS" : "FAIL", id, label.c_str(),
              secs, note.empty() ? "" : " -- ", note.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void run(int id, const std::string& label, const std::function<bool(std::string&)>& fn) {
  std::string note;
  bool pass = false;
  const auto t0 = Clock::now();
  try {
    pass = fn(note);
  } catch (const std::exception& e) {
    note = std::string("exception: ") + e.what();
  }
  report(id, label, pass, std::chrono::duration<double>(Clock::now() - t0).count(), note);
}

HessianState hessian_from(const TensorF32& x, double damp = 0.01) {
  HessianState s(x.rows());
  s.accumulate(x);
  s.finalize(damp);
  return s;
}

bool close_rel(double a, double b, double tol, double floor_scale) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), floor_scale});
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gptqt_acceptance";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// --- 1: golden rounding case ------------------------------------------

bool c1_round_golden(std::string& note) {
  Codebook cb;
  cb.base = 0;
  cb.deltas = {1, 6};
  cb.levels = {0, 1, 6, 7};
  const std::vector<int> ints = {0, 2, 3, 1, 1, 6, 5};
  const auto t0 = Clock::now();
  const std::vector<int> got = round_to_codebook(ints, cb);
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  if (got != std::vector<int>{0, 1, 1, 1, 1, 6, 6}) {
    note = "wrong rounding result";
    return false;
  }
  if (ms >= 1.0) {
    note = "took " + std::to_string(ms) + " ms";
    return false;
  }
  return true;
}

// --- 2: golden fusion case --------------------------------------------

bool c2_fuse_golden(std::string& note) {
  Codebook cb;
  cb.base = 0;
  cb.deltas = {1, 6};
  cb.levels = {0, 1, 6, 7};
  for (double s : {1.0, 0.37}) {
    for (double z : {0.0, -1.2}) {
      const FusedRow fr = fuse_plan(plan_from_codebook(3, cb, s, z));
      if (fr.m != 2 || std::abs(fr.alpha_hat[0] - 0.5 * s) > 1e-12 ||
          std::abs(fr.alpha_hat[1] - 3.0 * s) > 1e-12 ||
          std::abs(fr.beta - (3.5 * s + z)) > 1e-12) {
        note = "mismatch at S=" + std::to_string(s) + " z=" + std::to_string(z);
        return false;
      }
    }
  }
  return true;
}

// --- 3: fusion equivalence property -------------------------------------------

bool c3_fusion_property(std::string& note) {
  std::uint64_t ctr = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 3 + static_cast<int>(splitmix64_at(31, trial) % 4);
    const int m = 1 + static_cast<int>(splitmix64_at(32, trial) % (n - 1));
    std::vector<float> row(20);
    for (auto& v : row) v = static_cast<float>(normal_at(33, ctr++));
    PlanConfig cfg;
    cfg.inter_bits = n;
    cfg.bits = m;
    const RowPlan plan = build_row_plan(row, std::vector<double>(row.size(), 1.0), cfg);
    const FusedRow fr = fuse_plan(plan);

    std::vector<double> recon;
    for (std::size_t mask = 0; mask < (std::size_t{1} << fr.m); ++mask) {
      double v = fr.beta;
      for (int i = 0; i < fr.m; ++i) v += (mask >> i & 1) ? fr.alpha_hat[i] : -fr.alpha_hat[i];
      recon.push_back(v);
    }
    std::sort(recon.begin(), recon.end());
    if (recon.size() != plan.float_levels.size()) {
      note = "level count mismatch at trial " + std::to_string(trial);
      return false;
    }
    for (std::size_t i = 0; i < recon.size(); ++i)
      if (!close_rel(recon[i], plan.float_levels[i], 1e-6, 1e-9)) {
        note = "level mismatch at trial " + std::to_string(trial);
        return false;
      }
  }

  // dual-path dequantization on full layers
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TensorF32 w = gen_weights(64, 64, 40 + seed, 1.0f);
    const HessianState hess = hessian_from(gen_activations(64, 256, 50 + seed, 0.7f));
    QuantMethod m;
    m.tag = QuantMethod::Tag::Gptqt;
    m.bits = 3;
    m.inter_bits = 5;
    const QuantizedLayer layer = quantize_layer(w, hess, m);
    const TensorF32 dq = dequantize_packed(pack(layer));
    double scale = 0.0;
    for (float v : layer.dequant) scale = std::max(scale, std::abs(double(v)));
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c) {
        const RowPlan& plan = layer.plans[r];
        const double two_step =
            plan.scale * plan.codebook.levels[layer.indices[r * 64 + c]] + plan.zero;
        if (!close_rel(dq.at(r, c), two_step, 1e-5, 1e-3 * scale)) {
          note = "packed dequantization drifted from the two-step path";
          return false;
        }
      }
  }
  return true;
}

// --- 4: compensation oracle ----------------------------------------------------

bool c4_compensation_oracle(std::string& note) {
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 7;
    const HessianState hess =
        hessian_from(gen_activations(k, 4 * k, 7000 + trial, 0.2f + 0.1f * (trial % 6)));
    const TensorF32 w = gen_weights(1, k, 7500 + trial, 1.0f);
    std::vector<RowPlan> plans = {plan_from_linear(fit_linear({w.row_ptr(0), k}, 3))};

    std::vector<double> work(w.data.begin(), w.data.end());
    std::vector<std::uint8_t> idx;
    run_compensated_loop(work, 1, k, plans, hess.hinv_chol(), 128, 1, idx);

    Eigen::MatrixXd h(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) h(a, b) = hess.h()[a * k + b];
    const double dq0 =
        plans[0].float_levels[nearest_level_index(plans[0].float_levels, w.data[0])];
    const double delta0 = dq0 - double(w.data[0]);
    const Eigen::MatrixXd h_ff = h.block(1, 1, k - 1, k - 1);
    const Eigen::VectorXd h_f0 = h.block(1, 0, k - 1, 1);
    const Eigen::VectorXd delta_f = -h_ff.ldlt().solve(h_f0) * delta0;
    for (std::size_t j = 1; j < k; ++j) {
      const double expect = double(w.data[j]) + delta_f(j - 1);
      if (std::abs(work[j] - expect) > 1e-6 * std::max(1.0, std::abs(expect))) {
        note = "oracle mismatch at trial " + std::to_string(trial);
        return false;
      }
    }
  }

  // diagonal Hessian: compensation must vanish, GPTQ == RTN
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = 16;
    TensorF32 x({k, k}, std::vector<float>(k * k, 0.0f));
    for (std::size_t i = 0; i < k; ++i)
      x.at(i, i) = 0.5f + static_cast<float>(uniform_at(8000 + trial, i));
    const HessianState hess = hessian_from(x);
    const TensorF32 w = gen_weights(12, k, 8100 + trial, 1.0f);
    QuantMethod gptq;
    gptq.tag = QuantMethod::Tag::GptqLinear;
    gptq.bits = 3;
    QuantMethod rtn = gptq;
    rtn.tag = QuantMethod::Tag::RtnLinear;
    const QuantizedLayer a = quantize_layer(w, hess, gptq);
    const QuantizedLayer b = quantize_layer(w, hess, rtn);
    for (std::size_t i = 0; i < a.dequant.size(); ++i)
      if (std::abs(double(a.dequant[i]) - b.dequant[i]) > 1e-5) {
        note = "diagonal-H GPTQ deviated from RTN";
        return false;
      }
  }
  return true;
}

// --- 5: kernel equivalence -------------------------------------------------------

bool c5_kernel_equivalence(std::string& note) {
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {
      {1, 8}, {7, 13}, {64, 64}, {257, 129}};
  for (auto [rows, cols] : shapes) {
    for (int m = 1; m <= 4; ++m) {
      const PackedBCMatrix p = random_packed(rows, cols, m, rows * 1000 + cols * 7 + m);
      std::vector<float> x(cols);
      for (std::size_t i = 0; i < cols; ++i)
        x[i] = static_cast<float>(normal_at(rows + cols + m, i));

      std::vector<double> want(rows, 0.0);  // naive double loop
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          double wv = p.fused[r].beta;
          for (int i = 0; i < m; ++i)
            wv += p.bit(r, i, c) ? p.fused[r].alpha_hat[i] : -p.fused[r].alpha_hat[i];
          want[r] += wv * x[c];
        }
      double scale = 0.0;
      for (double v : want) scale = std::max(scale, std::abs(v));
      scale = std::max(1e-3 * scale, 1e-9);

      const std::vector<float> got = matvec_lut(p, x);
      for (std::size_t r = 0; r < rows; ++r)
        if (!close_rel(got[r], want[r], 1e-4, scale)) {
          note = "mismatch at " + std::to_string(rows) + "x" + std::to_string(cols) +
                 " m=" + std::to_string(m);
          return false;
        }
    }
  }
  return true;
}

// --- 6: search dominance ----------------------------------------------------------

bool c6_search_dominance(std::string& note) {
  for (int layer = 0; layer < 100; ++layer) {
    const std::size_t rows = 32, cols = 32;
    const TensorF32 w = gen_weights(rows, cols, 9000 + layer, 1.0f);
    const HessianState hess =
        hessian_from(gen_activations(cols, 128, 9500 + layer, layer % 2 ? 0.7f : 0.0f));
    const std::vector<double> hd = hess.hdiag();
    PlanConfig r0;
    r0.range_bits = 0;
    PlanConfig r1;
    r1.range_bits = 1;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::span<const float> row{w.row_ptr(r), cols};
      const double e0 = row_proxy_error(row, build_row_plan(row, hd, r0).float_levels, hd);
      const double e1 = row_proxy_error(row, build_row_plan(row, hd, r1).float_levels, hd);
      if (!(e1 <= e0)) {  // exact: the base scale is in the search grid
        note = "row " + std::to_string(r) + " of layer " + std::to_string(layer) +
               " got worse: " + std::to_string(e1) + " > " + std::to_string(e0);
        return false;
      }
    }
  }
  return true;
}

// --- 7: binary-coding baselines ------------------------------------------------------

bool c7_bc_baselines(std::string& note) {
  // greedy one-bit optimality
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> row(48);
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = static_cast<float>(normal_at(10000 + trial, i));
    const BinaryCode code = greedy_bc(row, 1);
    double mean_abs = 0.0, max_abs = 0.0;
    for (float v : row) {
      mean_abs += std::abs(double(v));
      max_abs = std::max(max_abs, std::abs(double(v)));
    }
    mean_abs /= double(row.size());
    if (code.alphas[0] != mean_abs) {
      note = "greedy alpha != mean |w|";
      return false;
    }
    auto mse_at = [&](double alpha) {
      double sq = 0.0;
      for (float v : row) {
        const double d = v - alpha * (v >= 0 ? 1.0 : -1.0);
        sq += d * d;
      }
      return sq / double(row.size());
    };
    const double best = mse_at(code.alphas[0]);
    for (int g = 0; g <= 10000; ++g)
      if (best > mse_at(2.0 * max_abs * g / 10000.0) + 1e-9) {
        note = "grid found a better alpha";
        return false;
      }
  }

  // ALS monotonicity over 1000 rows
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> row(32);
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = static_cast<float>(normal_at(20000 + trial, i));
    const BinaryCode code = bcq_als(row, 2, 10);
    for (std::size_t i = 1; i < code.mse_history.size(); ++i)
      if (code.mse_history[i] > code.mse_history[i - 1] + 1e-12) {
        note = "MSE increased at trial " + std::to_string(trial);
        return false;
      }
  }
  return true;
}

// --- 8: enumeration oracle -----------------------------------------------------------

bool c8_enumeration(std::string& note) {
  const auto cbs32 = enumerate_codebooks(3, 2);
  std::set<std::vector<int>> got;
  for (const auto& cb : cbs32) got.insert(cb.levels);
  if (cbs32.size() != 22 || got.size() != 22) {
    note = "(3,2) count " + std::to_string(cbs32.size());
    return false;
  }
  // exhaustive oracle: every 4-subset of {0..7} of the binary-coding form
  std::set<std::vector<int>> oracle;
  for (int a = 0; a <= 7; ++a)
    for (int d1 = 1; a + d1 <= 7; ++d1)
      for (int d2 = 1; a + d1 + d2 <= 7; ++d2) {
        std::vector<int> lv = {a, a + d1, a + d2, a + d1 + d2};
        std::sort(lv.begin(), lv.end());
        if (std::adjacent_find(lv.begin(), lv.end()) != lv.end()) continue;
        oracle.insert(lv);
      }
  if (got != oracle) {
    note = "(3,2) level sets differ from the exhaustive filter";
    return false;
  }
  if (!got.count({0, 1, 6, 7})) {
    note = "{0,1,6,7} missing";
    return false;
  }
  if (enumerate_codebooks(2, 1).size() != 6) {
    note = "(2,1) count wrong";
    return false;
  }
  return true;
}

// --- 9: trend reproduction ---------------------------------------------------------

bool c9_trend(std::string& note) {
  const int seeds = 100;
  int wins = 0;
  double mean_gptqt = 0.0, mean_bcq = 0.0, mean_minmse = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    const TensorF32 w = gen_weights(256, 256, 100000 + seed, 1.0f);
    const TensorF32 x = gen_activations(256, 512, splitmix64_at(200000 + seed, 1), 0.9f);
    const TensorF32 xv = gen_activations(256, 256, splitmix64_at(200000 + seed, 2), 0.9f);
    const HessianState hess = hessian_from(x);

    QuantMethod gptqt_m;
    gptqt_m.tag = QuantMethod::Tag::Gptqt;
    gptqt_m.bits = 3;
    gptqt_m.inter_bits = 5;
    gptqt_m.range_bits = 1;
    QuantMethod bcq_m;
    bcq_m.tag = QuantMethod::Tag::GptqBcq;
    bcq_m.bits = 3;
    QuantMethod minmse_m;
    minmse_m.tag = QuantMethod::Tag::GptqMinMse;
    minmse_m.bits = 3;

    const double e_gptqt =
        layer_output_error(w, quantize_layer(w, hess, gptqt_m).dequant_tensor(), xv);
    const double e_bcq =
        layer_output_error(w, quantize_layer(w, hess, bcq_m).dequant_tensor(), xv);
    const double e_minmse =
        layer_output_error(w, quantize_layer(w, hess, minmse_m).dequant_tensor(), xv);
    mean_gptqt += e_gptqt;
    mean_bcq += e_bcq;
    mean_minmse += e_minmse;
    if (e_gptqt < e_bcq && e_gptqt < e_minmse) ++wins;
  }
  mean_gptqt /= seeds;
  mean_bcq /= seeds;
  mean_minmse /= seeds;
  char buf[160];
  std::snprintf(buf, sizeof buf, "means: gptqt=%.5f gptq+bcq=%.5f gptq(minMSE)=%.5f wins=%d/100",
                mean_gptqt, mean_bcq, mean_minmse, wins);
  note = buf;
  return mean_gptqt < mean_bcq && mean_gptqt < mean_minmse && wins >= 80;
}

// --- 10: storage budget -----------------------------------------------------------

bool c10_storage(std::string& note) {
  const std::size_t rows = 4096, cols = 4096;
  const int m = 3;
  const PackedBCMatrix p = random_packed(rows, cols, m, 99);
  const auto path = temp_file("storage.gqtq");
  serialize(p, path);
  const std::size_t size = std::filesystem::file_size(path);
  const std::size_t fp32 = rows * cols * 4;
  const std::size_t payload = rows * std::size_t(m) * ((cols + 7) / 8);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.2f MB vs %.0f MB fp32 (%.1fx)", size / 1e6, fp32 / 1e6,
                double(fp32) / size);
  note = buf;
  if (size != packed_file_size(rows, cols, m)) {
    note += " -- size formula violated";
    return false;
  }
  return size <= 6'500'000 && double(fp32) / size >= 9.0 && payload * 32 == fp32 * 3;
}

// --- 11: kernel throughput sanity ---------------------------------------------------

bool c11_throughput(std::string& note) {
  const auto rows = bench({{4096, 4096}}, 3, 5, 7);
  double lut_ratio = 0.0, lut_ms = 0.0, dq_ms = 0.0;
  for (const BenchRow& r : rows) {
    if (r.path == "lut") {
      lut_ratio = r.ratio_vs_dequant;
      lut_ms = r.median_ms;
    }
    if (r.path == "dequant") dq_ms = r.median_ms;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "lut %.2f ms vs dequant %.2f ms (%.2fx; GPU implementations of this kernel family report ~1.24x)",
                lut_ms, dq_ms, lut_ratio);
  note = buf;
  return lut_ratio >= 1.0;
}

}  // namespace

int main() {
  std::printf("gptqt acceptance suite\n");

  run(1, "codebook rounding golden case", c1_round_golden);
  run(2, "fusion golden case", c2_fuse_golden);
  run(3, "fusion equivalence on 1000 plans + packed layers", c3_fusion_property);
  run(4, "compensation matches the constrained minimizer", c4_compensation_oracle);
  run(5, "LUT matvec equals the naive double loop", [](std::string& n) {
    const auto t0 = Clock::now();
    const bool ok = c5_kernel_equivalence(n);
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s >= 10.0) {
      n = "suite took " + std::to_string(s) + " s";
      return false;
    }
    return ok;
  });
  run(6, "re-exploration never hurts the proxy (exact)", c6_search_dominance);
  run(7, "greedy/ALS binary-coding baselines", c7_bc_baselines);
  run(8, "codebook enumeration vs exhaustive oracle", [](std::string& n) {
    const auto t0 = Clock::now();
    const bool ok = c8_enumeration(n);
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s >= 1.0) {
      n = "took " + std::to_string(s) + " s";
      return false;
    }
    return ok;
  });
  run(9, "output-error ordering vs GPTQ+BCQ and GPTQ(minMSE)", [](std::string& n) {
    const auto t0 = Clock::now();
    const bool ok = c9_trend(n);
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s >= 900.0) {
      n += " -- exceeded the 15 min budget";
      return false;
    }
    return ok;
  });
  run(10, "packed storage budget at 4096x4096", c10_storage);
  run(11, "LUT kernel at least matches the dequant path", c11_throughput);

  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
