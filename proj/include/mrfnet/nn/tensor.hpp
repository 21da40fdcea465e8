#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <type_traits>
#include <vector>

namespace mrfnet::nn {

// Row-major matrix; batch dimension runs down the rows.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Tensor2 = Mat<double>;
using RowVec = Row<double>;
using MatMap = Eigen::Map<Tensor2>;
using ConstMatMap = Eigen::Map<const Tensor2>;
using RowMap = Eigen::Map<RowVec>;
using ConstRowMap = Eigen::Map<const RowVec>;

// Flat parameter and gradient storage. Vectorised kernels split their work by
// address alignment, so a fixed alignment keeps results bitwise reproducible.
template <typename S>
using FlatVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return S(1) / (S(1) + (-x).exp());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename Mat, typename Rng>
void glorot_uniform(Mat&& w, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
}

// Square orthogonal matrix: Q from the QR factorisation of a Gaussian draw,
// columns sign-corrected so the distribution is uniform.
template <typename Mat, typename Rng>
void orthogonal(Mat&& w, Rng& rng) {
  const Eigen::Index n = w.rows();
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) a(r, c) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < n; ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;
  w = q.cast<typename std::decay_t<Mat>::Scalar>();
}

}  // namespace mrfnet::nn
