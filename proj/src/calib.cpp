#include "gptqt/calib.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gptqt {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

HessianState::HessianState(std::size_t k, std::size_t max_features) : k_(k), h_(k * k, 0.0) {
  if (k < 1) throw std::invalid_argument("HessianState: k must be >= 1");
  if (k > max_features)
    throw std::invalid_argument("HessianState: k=" + std::to_string(k) +
                                " exceeds the feature cap of " + std::to_string(max_features));
}

void HessianState::accumulate(const TensorF32& x) {
  if (finalized_) throw std::logic_error("HessianState: accumulate after finalize");
  if (x.ndim() != 2 || x.rows() != k_)
    throw std::invalid_argument("HessianState: batch must be k x m with k=" + std::to_string(k_));
  const std::size_t m = x.cols();
  Eigen::Map<MatrixRM> h(h_.data(), k_, k_);
  Eigen::MatrixXd xd(k_, m);
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < m; ++j) xd(i, j) = x.at(i, j);
  h.selfadjointView<Eigen::Lower>().rankUpdate(xd, 2.0);
  h = h.selfadjointView<Eigen::Lower>();  // keep the full matrix symmetric
  nsamples_ += m;
}

void HessianState::finalize(double damp_pct) {
  if (finalized_) throw std::logic_error("HessianState: already finalized");
  if (nsamples_ < 1) throw std::logic_error("HessianState: no samples accumulated");
  if (!(damp_pct > 0.0)) throw std::invalid_argument("HessianState: damp_pct must be > 0");

  Eigen::Map<MatrixRM> h(h_.data(), k_, k_);
  damping_lambda_ = damp_pct * h.diagonal().mean();
  h.diagonal().array() += damping_lambda_;

  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "HessianState: Cholesky failed after damping; calibration is degenerate, raise damp_pct");

  Eigen::MatrixXd hinv = llt.solve(Eigen::MatrixXd::Identity(k_, k_));
  Eigen::LLT<Eigen::MatrixXd> llt_inv(hinv);
  if (llt_inv.info() != Eigen::Success)
    throw std::runtime_error("HessianState: H^-1 lost positive definiteness; raise damp_pct");

  MatrixRM u = llt_inv.matrixL().transpose();  // upper factor, H^-1 = U^T U
  hinv_chol_.assign(u.data(), u.data() + k_ * k_);
  finalized_ = true;
}

std::vector<double> HessianState::hdiag() const {
  if (!finalized_) throw std::logic_error("HessianState: hdiag before finalize");
  std::vector<double> d(k_);
  for (std::size_t i = 0; i < k_; ++i) d[i] = h_[i * k_ + i];
  return d;
}

const std::vector<double>& HessianState::hinv_chol() const {
  if (!finalized_) throw std::logic_error("HessianState: hinv_chol before finalize");
  return hinv_chol_;
}

}  // namespace gptqt
