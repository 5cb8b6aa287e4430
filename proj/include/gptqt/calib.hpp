#pragma once

#include <cstddef>
#include <vector>

#include "gptqt/tensor.hpp"

namespace gptqt {

/// Layer-wise proxy Hessian H = 2 * X * X^T accumulated over calibration
/// batches, then damped and factored on finalize(). After finalize() the
/// state is immutable and safe to share across parallel row workers.
class HessianState {
public:
  static constexpr std::size_t kDefaultMaxFeatures = 8192;  // k*k dense storage

  explicit HessianState(std::size_t k, std::size_t max_features = kDefaultMaxFeatures);

  /// Adds a batch of activations (k x m, feature-major): H += 2 * X * X^T.
  void accumulate(const TensorF32& x);

  /// Damps the diagonal by damp_pct * mean(diag(H)), then computes the upper
  /// Cholesky factor U of H^-1 (H^-1 = U^T * U). Freezes the state.
  /// Throws if the damped H is not positive definite; the caller should
  /// raise damp_pct in that case.
  void finalize(double damp_pct);

  std::size_t k() const { return k_; }
  std::size_t nsamples() const { return nsamples_; }
  bool finalized() const { return finalized_; }
  double damping_lambda() const { return damping_lambda_; }

  /// Row-major k x k matrix; damped once finalized.
  const std::vector<double>& h() const { return h_; }

  /// Diagonal of the damped H. Only valid after finalize().
  std::vector<double> hdiag() const;

  /// Row-major upper-triangular U with H^-1 = U^T * U. Only after finalize().
  const std::vector<double>& hinv_chol() const;

private:
  std::size_t k_;
  std::size_t nsamples_ = 0;
  bool finalized_ = false;
  double damping_lambda_ = 0.0;
  std::vector<double> h_;
  std::vector<double> hinv_chol_;
};

}  // namespace gptqt
