#pragma once

#include <stdexcept>
#include <string>

#include "mrfnet/nn/tensor.hpp"

namespace mrfnet::nn {

inline void check_same_shape(const Tensor2& pred, const Tensor2& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0)
    throw std::invalid_argument("mse: prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                                " vs target " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
}

/// Mean over all entries of the squared difference.
inline double mse_loss(const Tensor2& pred, const Tensor2& target) {
  check_same_shape(pred, target);
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

inline Tensor2 mse_gradient(const Tensor2& pred, const Tensor2& target) {
  check_same_shape(pred, target);
  return (2.0 / static_cast<double>(pred.size())) * (pred - target);
}

}  // namespace mrfnet::nn
