#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mrfnet::nn {

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  explicit AdamState(std::size_t n_params, double lr = 1e-4) : learning_rate(lr), m(n_params, 0.0), v(n_params, 0.0) {}
};

/// Bias-corrected Adam step: theta -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_update(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != s.m.size() || s.v.size() != s.m.size())
    throw std::invalid_argument("adam_update: parameter, gradient and moment sizes differ");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    params[i] -= s.learning_rate * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.epsilon);
  }
}

}  // namespace mrfnet::nn
