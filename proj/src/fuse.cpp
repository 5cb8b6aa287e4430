#include "gptqt/fuse.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace gptqt {

FusedRow fuse_plan(const RowPlan& plan) {
  FusedRow fr;
  if (plan.kind == RowPlan::Kind::Constant) {
    fr.m = 0;
    fr.beta = plan.float_levels[0];
    return fr;
  }
  fr.m = static_cast<int>(plan.fused_alphas.size());
  fr.alpha_hat = plan.fused_alphas;
  fr.beta = plan.fused_beta;
  return fr;
}

PackedBCMatrix pack(const QuantizedLayer& layer) {
  PackedBCMatrix p;
  p.rows = layer.rows;
  p.cols = layer.cols;
  p.fused.resize(layer.rows);

  int m = 0;
  for (std::size_t r = 0; r < layer.rows; ++r) {
    p.fused[r] = fuse_plan(layer.plans[r]);
    m = std::max(m, p.fused[r].m);
  }
  p.m = m;

  const std::size_t stride = p.plane_stride();
  p.bitplanes.assign(layer.rows * static_cast<std::size_t>(m) * stride, 0);

  for (std::size_t r = 0; r < layer.rows; ++r) {
    const RowPlan& plan = layer.plans[r];
    // a grid codebook with duplicate subset sums collapses levels and leaves
    // indices without a unique decomposition
    if (plan.kind == RowPlan::Kind::Grid &&
        plan.float_levels.size() != (std::size_t{1} << plan.bits))
      throw PackError("pack: row " + std::to_string(r) +
                      " has collapsed levels (duplicate subset sums in the codebook)");
    // Narrow rows get zero coefficients in front; their planes read as +1.
    const int npad = m - p.fused[r].m;
    std::vector<double> padded(static_cast<std::size_t>(npad), 0.0);
    padded.insert(padded.end(), p.fused[r].alpha_hat.begin(), p.fused[r].alpha_hat.end());
    p.fused[r].alpha_hat = std::move(padded);
    p.fused[r].m = m;

    std::uint8_t* planes = p.bitplanes.data() + r * static_cast<std::size_t>(m) * stride;
    for (std::size_t c = 0; c < layer.cols; ++c) {
      const std::size_t idx = layer.indices[r * layer.cols + c];
      if (idx >= plan.float_levels.size())
        throw PackError("pack: level index out of range at row " + std::to_string(r));
      const std::uint8_t pattern = plan.level_patterns[idx];
      for (int i = 0; i < npad; ++i)
        planes[i * stride + (c >> 3)] |= std::uint8_t(1) << (c & 7);
      for (int i = 0; i < m - npad; ++i)
        if (pattern >> i & 1)
          planes[(npad + i) * stride + (c >> 3)] |= std::uint8_t(1) << (c & 7);
    }
  }
  return p;
}

TensorF32 dequantize_packed(const PackedBCMatrix& p) {
  TensorF32 t;
  t.dims = {p.rows, p.cols};
  t.data.resize(p.rows * p.cols);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const FusedRow& fr = p.fused[r];
    for (std::size_t c = 0; c < p.cols; ++c) {
      double v = fr.beta;
      for (int i = 0; i < p.m; ++i)
        v += p.bit(r, i, c) ? fr.alpha_hat[i] : -fr.alpha_hat[i];
      t.data[r * p.cols + c] = static_cast<float>(v);
    }
  }
  return t;
}

namespace {

constexpr char kMagic[4] = {'G', 'Q', 'T', 'Q'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T read_le(const unsigned char* ptr) {
  T v;
  std::memcpy(&v, ptr, sizeof(T));
  return v;
}

}  // namespace

std::size_t packed_file_size(std::size_t rows, std::size_t cols, int m) {
  const std::size_t stride = (cols + 7) / 8;
  return 17 + rows * 4 * (static_cast<std::size_t>(m) + 1) +
         rows * static_cast<std::size_t>(m) * stride;
}

void serialize(const PackedBCMatrix& p, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PackError("serialize: cannot open " + path.string());
  f.write(kMagic, 4);
  const std::uint32_t ver = kVersion, rows = static_cast<std::uint32_t>(p.rows),
                      cols = static_cast<std::uint32_t>(p.cols);
  const std::uint8_t m = static_cast<std::uint8_t>(p.m);
  f.write(reinterpret_cast<const char*>(&ver), 4);
  f.write(reinterpret_cast<const char*>(&rows), 4);
  f.write(reinterpret_cast<const char*>(&cols), 4);
  f.write(reinterpret_cast<const char*>(&m), 1);
  for (const FusedRow& fr : p.fused) {
    for (int i = 0; i < p.m; ++i) {
      const float a = static_cast<float>(fr.alpha_hat[i]);
      f.write(reinterpret_cast<const char*>(&a), 4);
    }
    const float b = static_cast<float>(fr.beta);
    f.write(reinterpret_cast<const char*>(&b), 4);
  }
  if (!p.bitplanes.empty())
    f.write(reinterpret_cast<const char*>(p.bitplanes.data()),
            static_cast<std::streamsize>(p.bitplanes.size()));
  if (!f) throw PackError("serialize: write failed for " + path.string());
}

PackedBCMatrix deserialize(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PackError("deserialize: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw PackError("deserialize: bad magic in " + path.string());
  if (bytes.size() < 17) throw PackError("deserialize: truncated header");
  const auto ver = read_le<std::uint32_t>(bytes.data() + 4);
  if (ver != kVersion)
    throw PackError("deserialize: version mismatch, expected 1, got " + std::to_string(ver));

  PackedBCMatrix p;
  p.rows = read_le<std::uint32_t>(bytes.data() + 8);
  p.cols = read_le<std::uint32_t>(bytes.data() + 12);
  p.m = bytes[16];
  if (bytes.size() != packed_file_size(p.rows, p.cols, p.m))
    throw PackError("deserialize: size mismatch, expected " +
                    std::to_string(packed_file_size(p.rows, p.cols, p.m)) + " bytes, got " +
                    std::to_string(bytes.size()));

  std::size_t off = 17;
  p.fused.resize(p.rows);
  for (std::size_t r = 0; r < p.rows; ++r) {
    FusedRow& fr = p.fused[r];
    fr.m = p.m;
    fr.alpha_hat.resize(p.m);
    for (int i = 0; i < p.m; ++i) {
      fr.alpha_hat[i] = read_le<float>(bytes.data() + off);
      off += 4;
    }
    fr.beta = read_le<float>(bytes.data() + off);
    off += 4;
  }
  const std::size_t nplanes = p.rows * static_cast<std::size_t>(p.m) * p.plane_stride();
  p.bitplanes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(off + nplanes));

  // pad bits past the last column must be clear
  const std::size_t tail = p.cols & 7;
  if (tail != 0 && p.plane_stride() > 0) {
    const std::uint8_t mask = static_cast<std::uint8_t>(0xFF << tail);
    for (std::size_t r = 0; r < p.rows; ++r)
      for (int i = 0; i < p.m; ++i)
        if (p.plane(r, i)[p.plane_stride() - 1] & mask)
          throw PackError("deserialize: nonzero padding bits in " + path.string());
  }
  return p;
}

}  // namespace gptqt
