#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gptqt {

/// Dense row-major float32 tensor, rank 1 or 2. The universal carrier for
/// weight matrices (rows x cols) and calibration activations
/// (features x samples).
struct TensorF32 {
  std::vector<std::size_t> dims;
  std::vector<float> data;

  TensorF32() = default;
  TensorF32(std::vector<std::size_t> d, std::vector<float> v)
      : dims(std::move(d)), data(std::move(v)) {}

  static TensorF32 zeros(std::size_t rows, std::size_t cols) {
    return TensorF32({rows, cols}, std::vector<float>(rows * cols, 0.0f));
  }

  std::size_t ndim() const { return dims.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t cols() const { return dims.size() < 2 ? (dims.empty() ? 0 : 1) : dims[1]; }

  float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  const float* row_ptr(std::size_t r) const { return data.data() + r * cols(); }
  float* row_ptr(std::size_t r) { return data.data() + r * cols(); }
};

/// Raised by the GQTF loader/writer. `kind` is a stable machine-checkable
/// discriminator; `what()` carries the human-readable detail.
class TensorIoError : public std::runtime_error {
public:
  enum class Kind {
    BadMagic,
    VersionMismatch,
    BadHeader,
    TruncatedPayload,
    TrailingBytes,
    NonFinite,
    InvalidTensor,
    Io,
  };

  TensorIoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

/// Reads a GQTF tensor file. Layout (little-endian, no padding):
/// magic "GQTF", u32 version=1, u8 ndim, ndim x u64 dims,
/// product(dims) x f32 payload. Rejects non-finite elements.
TensorF32 read_tensor(const std::filesystem::path& path);

/// Writes `t` in GQTF format. Validates the tensor (rank <= 2, finite data,
/// dims consistent with payload) before touching the file.
void write_tensor(const std::filesystem::path& path, const TensorF32& t);

// Counter-based pseudo-random source. splitmix64_at(seed, i) equals the i-th
// output of the standard splitmix64 stream seeded with `seed`; being a pure
// function of (seed, i) it reproduces bit-exactly in any language.
std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t i);

/// Uniform draw in (0, 1] from the counter stream.
double uniform_at(std::uint64_t seed, std::uint64_t i);

/// Standard normal draw i: Box-Muller over stream positions 2i and 2i+1.
double normal_at(std::uint64_t seed, std::uint64_t i);

/// Deterministic pseudo-normal weight matrix, mean 0, stddev = scale.
TensorF32 gen_weights(std::size_t rows, std::size_t cols, std::uint64_t seed, float scale);

/// Synthetic calibration activations, feature-major (cols x nsamples), with
/// AR(1) correlation `rho` along the feature axis so the resulting proxy
/// Hessian is non-diagonal when rho > 0.
TensorF32 gen_activations(std::size_t cols, std::size_t nsamples, std::uint64_t seed, float rho);

}  // namespace gptqt
