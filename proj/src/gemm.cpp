#include "gptqt/gemm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace gptqt {

namespace {

using Clock = std::chrono::steady_clock;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool close_rel(double a, double b, double tol, double floor_scale) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), floor_scale});
}

}  // namespace

GroupLUT build_lut(std::span<const float> x, int group_size) {
  if (group_size < 4 || group_size > 16)
    throw std::invalid_argument("build_lut: group_size must be in 4..16");
  GroupLUT lut;
  lut.group_size = group_size;
  lut.len = x.size();
  const std::size_t tsize = lut.table_size();
  const std::size_t ngroups = lut.ngroups();
  lut.tables.assign(ngroups * tsize, 0.0);

  for (std::size_t g = 0; g < ngroups; ++g) {
    double* t = lut.tables.data() + g * tsize;
    // grow the table one element at a time: upper half = old + x_j,
    // lower half by antisymmetry
    for (int j = 0; j < group_size; ++j) {
      const std::size_t pos = g * group_size + static_cast<std::size_t>(j);
      const double xj = pos < lut.len ? x[pos] : 0.0;  // zero-padded tail
      const std::size_t half = std::size_t{1} << j;
      for (std::size_t i = 0; i < half; ++i) {
        t[half + i] = t[i] + xj;
        ++lut.build_additions;
      }
      for (std::size_t i = 0; i < half; ++i) t[i] = -t[2 * half - 1 - i];
    }
  }
  return lut;
}

std::vector<float> matvec_lut(const PackedBCMatrix& p, std::span<const float> x,
                              int group_size, int threads) {
  if (x.size() != p.cols) throw std::invalid_argument("matvec_lut: length mismatch");
  const GroupLUT lut = build_lut(x, group_size);
  const std::size_t ngroups = lut.ngroups();

  double sum_x = 0.0;
  for (float v : x) sum_x += v;

  std::vector<float> y(p.rows);
  auto rows_chunk = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const FusedRow& fr = p.fused[r];
      double acc = fr.beta * sum_x;
      for (int i = 0; i < p.m; ++i) {
        const std::uint8_t* plane = p.plane(r, i);
        double s = 0.0;
        if (group_size == 8) {
          for (std::size_t g = 0; g < ngroups; ++g) s += lut.table(g)[plane[g]];
        } else {
          for (std::size_t g = 0; g < ngroups; ++g) {
            std::uint32_t idx = 0;
            for (int j = 0; j < group_size; ++j) {
              const std::size_t pos = g * static_cast<std::size_t>(group_size) + j;
              if (pos < p.cols && ((plane[pos >> 3] >> (pos & 7)) & 1))
                idx |= std::uint32_t{1} << j;
            }
            s += lut.table(g)[idx];
          }
        }
        acc += fr.alpha_hat[i] * s;
      }
      y[r] = static_cast<float>(acc);
    }
  };

  const std::size_t nthreads =
      std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(p.rows, 1));
  if (nthreads <= 1) {
    rows_chunk(0, p.rows);
  } else {
    std::vector<std::thread> pool;
    const std::size_t step = (p.rows + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
      const std::size_t r0 = t * step;
      const std::size_t r1 = std::min(r0 + step, p.rows);
      if (r0 < r1) pool.emplace_back(rows_chunk, r0, r1);
    }
    for (auto& th : pool) th.join();
  }
  return y;
}

std::vector<float> matvec_reference(const PackedBCMatrix& p, std::span<const float> x) {
  if (x.size() != p.cols) throw std::invalid_argument("matvec_reference: length mismatch");
  const TensorF32 w = dequantize_packed(p);
  return matvec_dense(w, x);
}

std::vector<float> matvec_dense(const TensorF32& w, std::span<const float> x) {
  if (x.size() != w.cols()) throw std::invalid_argument("matvec_dense: length mismatch");
  std::vector<float> y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const float* row = w.row_ptr(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += static_cast<double>(row[c]) * x[c];
    y[r] = static_cast<float>(acc);
  }
  return y;
}

PackedBCMatrix random_packed(std::size_t rows, std::size_t cols, int m, std::uint64_t seed) {
  if (m < 0 || m > 8) throw std::invalid_argument("random_packed: m must be in 0..8");
  PackedBCMatrix p;
  p.rows = rows;
  p.cols = cols;
  p.m = m;
  p.fused.resize(rows);
  const std::size_t stride = p.plane_stride();
  p.bitplanes.resize(rows * static_cast<std::size_t>(m) * stride);

  std::uint64_t ctr = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    FusedRow& fr = p.fused[r];
    fr.m = m;
    fr.alpha_hat.resize(m);
    for (int i = 0; i < m; ++i)
      fr.alpha_hat[i] = 0.05 + uniform_at(seed, ctr++);  // strictly positive
    std::sort(fr.alpha_hat.begin(), fr.alpha_hat.end());
    fr.beta = normal_at(seed ^ 0x5bd1e995, ctr++) * 0.5;
  }
  for (std::size_t i = 0; i < p.bitplanes.size(); ++i)
    p.bitplanes[i] = static_cast<std::uint8_t>(splitmix64_at(seed ^ 0xc2b2ae35, i));
  // clear padding bits past the last column
  const std::size_t tail = cols & 7;
  if (tail != 0 && stride > 0) {
    const std::uint8_t mask = static_cast<std::uint8_t>((1u << tail) - 1);
    for (std::size_t r = 0; r < rows; ++r)
      for (int i = 0; i < m; ++i) {
        std::uint8_t* plane = p.bitplanes.data() + (r * m + i) * stride;
        plane[stride - 1] &= mask;
      }
  }
  return p;
}

std::vector<BenchRow> bench(const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                            int m, int reps, std::uint64_t seed, bool parallel) {
  if (reps < 3) throw std::invalid_argument("bench: reps must be >= 3");
  const int lut_threads =
      parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1;
  std::vector<BenchRow> out;

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const auto [rows, cols] = sizes[si];
    const PackedBCMatrix p = random_packed(rows, cols, m, seed + si);
    std::vector<float> x(cols);
    for (std::size_t i = 0; i < cols; ++i)
      x[i] = static_cast<float>(normal_at(seed ^ 0x9e3779b9, si * cols + i));
    const TensorF32 w_dense = dequantize_packed(p);

    // all paths must agree before anything is timed
    const std::vector<float> y_dense = matvec_dense(w_dense, x);
    const std::vector<float> y_dq = matvec_reference(p, x);
    const std::vector<float> y_lut = matvec_lut(p, x);
    double scale = 0.0;
    for (float v : y_dense) scale = std::max(scale, std::abs(static_cast<double>(v)));
    scale = std::max(scale * 1e-3, 1e-9);
    for (std::size_t r = 0; r < rows; ++r)
      if (!close_rel(y_dense[r], y_dq[r], 1e-4, scale) ||
          !close_rel(y_dense[r], y_lut[r], 1e-4, scale))
        throw std::runtime_error("bench: kernel paths disagree at row " + std::to_string(r));

    volatile double sink = 0.0;
    auto time_path = [&](auto&& fn) {
      std::vector<double> ms(reps);
      for (int rep = 0; rep < reps; ++rep) {
        const auto t0 = Clock::now();
        const std::vector<float> y = fn();
        ms[rep] = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        sink = sink + y[0];
      }
      return median_of(ms);
    };

    const double dense_ms = time_path([&] { return matvec_dense(w_dense, x); });
    const double dq_ms = time_path([&] {
      const TensorF32 w = dequantize_packed(p);
      return matvec_dense(w, x);
    });
    const double lut_ms = time_path([&] { return matvec_lut(p, x, 8, lut_threads); });

    out.push_back({rows, cols, m, "dense", dense_ms, dq_ms / dense_ms});
    out.push_back({rows, cols, m, "dequant", dq_ms, 1.0});
    out.push_back({rows, cols, m, "lut", lut_ms, dq_ms / lut_ms});
  }
  return out;
}

}  // namespace gptqt
