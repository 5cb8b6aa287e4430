#include "gptqt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace gptqt {

namespace {

constexpr char kMagic[4] = {'G', 'Q', 'T', 'F'};
constexpr std::uint32_t kVersion = 1;

void validate(const TensorF32& t) {
  if (t.dims.empty() || t.dims.size() > 2)
    throw TensorIoError(TensorIoError::Kind::InvalidTensor,
                        "tensor rank must be 1 or 2, got " + std::to_string(t.dims.size()));
  std::size_t n = 1;
  for (auto d : t.dims) n *= d;
  if (n != t.data.size())
    throw TensorIoError(TensorIoError::Kind::InvalidTensor,
                        "dims/payload mismatch: product(dims)=" + std::to_string(n) +
                            " but data has " + std::to_string(t.data.size()) + " elements");
  for (float v : t.data)
    if (!std::isfinite(v))
      throw TensorIoError(TensorIoError::Kind::NonFinite, "non-finite element in tensor");
}

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;  // little-endian host assumed (x86/arm64)
}

}  // namespace

TensorF32 read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw TensorIoError(TensorIoError::Kind::BadMagic, "bad magic in " + path.string());
  if (bytes.size() < 9)
    throw TensorIoError(TensorIoError::Kind::BadHeader, "header truncated in " + path.string());
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kVersion)
    throw TensorIoError(TensorIoError::Kind::VersionMismatch,
                        "version mismatch: expected 1, got " + std::to_string(version));
  const std::size_t ndim = bytes[8];
  if (ndim < 1 || ndim > 2)
    throw TensorIoError(TensorIoError::Kind::BadHeader,
                        "unsupported rank " + std::to_string(ndim));
  std::size_t off = 9;
  if (bytes.size() < off + 8 * ndim)
    throw TensorIoError(TensorIoError::Kind::BadHeader, "header truncated in " + path.string());

  TensorF32 t;
  std::size_t n = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto d = read_le<std::uint64_t>(bytes.data() + off);
    off += 8;
    t.dims.push_back(static_cast<std::size_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  const std::size_t payload = bytes.size() - off;
  if (payload < n * 4)
    throw TensorIoError(TensorIoError::Kind::TruncatedPayload,
                        "truncated payload: expected " + std::to_string(n * 4) + " bytes, got " +
                            std::to_string(payload));
  if (payload > n * 4)
    throw TensorIoError(TensorIoError::Kind::TrailingBytes,
                        "trailing bytes after payload in " + path.string());

  t.data.resize(n);
  if (n > 0) std::memcpy(t.data.data(), bytes.data() + off, n * 4);
  for (float v : t.data)
    if (!std::isfinite(v))
      throw TensorIoError(TensorIoError::Kind::NonFinite,
                          "non-finite element in " + path.string());
  return t;
}

void write_tensor(const std::filesystem::path& path, const TensorF32& t) {
  validate(t);  // before any bytes hit the disk
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string() + " for write");
  f.write(kMagic, 4);
  const std::uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint8_t ndim = static_cast<std::uint8_t>(t.dims.size());
  f.write(reinterpret_cast<const char*>(&ndim), 1);
  for (auto d : t.dims) {
    const std::uint64_t d64 = d;
    f.write(reinterpret_cast<const char*>(&d64), 8);
  }
  if (!t.data.empty())
    f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  if (!f)
    throw TensorIoError(TensorIoError::Kind::Io, "write failed for " + path.string());
}

std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + (i + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform_at(std::uint64_t seed, std::uint64_t i) {
  // 53 high bits, shifted into (0, 1] so log() below never sees zero.
  return (static_cast<double>(splitmix64_at(seed, i) >> 11) + 1.0) * 0x1.0p-53;
}

double normal_at(std::uint64_t seed, std::uint64_t i) {
  const double u1 = uniform_at(seed, 2 * i);
  const double u2 = uniform_at(seed, 2 * i + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

TensorF32 gen_weights(std::size_t rows, std::size_t cols, std::uint64_t seed, float scale) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("gen_weights: rows and cols must be >= 1");
  TensorF32 t;
  t.dims = {rows, cols};
  t.data.resize(rows * cols);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    t.data[i] = static_cast<float>(scale * normal_at(seed, i));
  return t;
}

TensorF32 gen_activations(std::size_t cols, std::size_t nsamples, std::uint64_t seed, float rho) {
  if (cols < 1 || nsamples < 1)
    throw std::invalid_argument("gen_activations: cols and nsamples must be >= 1");
  if (!(rho >= 0.0f && rho < 1.0f))
    throw std::invalid_argument("gen_activations: rho must be in [0, 1)");
  TensorF32 t;
  t.dims = {cols, nsamples};
  t.data.resize(cols * nsamples);
  const double r = rho;
  const double innov = std::sqrt(1.0 - r * r);  // keeps the process at unit variance
  for (std::size_t j = 0; j < nsamples; ++j) {
    double prev = 0.0;
    for (std::size_t i = 0; i < cols; ++i) {
      const double z = normal_at(seed, j * cols + i);
      const double x = (i == 0) ? z : r * prev + innov * z;
      t.data[i * nsamples + j] = static_cast<float>(x);
      prev = x;
    }
  }
  return t;
}

}  // namespace gptqt
