#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mrfnet/nn/cells.hpp"
#include "mrfnet/nn/loss.hpp"
#include "mrfnet/nn/model.hpp"

namespace mrfnet::check {

// Worst relative error between the analytic MSE gradient and central differences.
// The difference quotient is evaluated on an extended-precision copy of the model,
// so truncation of the quotient itself does not pollute small gradient entries.
inline double gradient_check(const nn::ModelSpec& spec, int batch, unsigned seed, double delta = 1e-6) {
  nn::Model m(spec);
  m.initialize(seed);
  std::mt19937_64 rng(seed + 7);
  std::normal_distribution<double> nd;
  for (auto& p : m.params()) p += 0.3 * nd(rng);
  nn::Tensor2 x(batch, spec.input_len), t(batch, nn::kOutputDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = nd(rng);

  nn::Tape tape;
  const auto y = m.forward(x, &tape);
  std::vector<double> g(m.size());
  m.backward(tape, nn::mse_gradient(y, t), g);

  using LD = long double;
  nn::BasicModel<LD> ml(spec);
  const std::vector<LD> pl(m.params().begin(), m.params().end());
  ml.set_params(pl);
  const nn::Mat<LD> xl = x.cast<LD>(), tl = t.cast<LD>();
  auto loss = [&] {
    const nn::Mat<LD> d = ml.forward(xl) - tl;
    return d.squaredNorm() / static_cast<LD>(d.size());
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const LD orig = ml.params()[i];
    ml.params()[i] = orig + delta;
    const LD lp = loss();
    ml.params()[i] = orig - delta;
    const LD lm = loss();
    ml.params()[i] = orig;
    const double num = static_cast<double>((lp - lm) / (2 * static_cast<LD>(delta)));
    const double den = std::max(std::abs(num), std::abs(g[i]));
    worst = std::max(worst, den == 0.0 ? 0.0 : std::abs(num - g[i]) / den);
  }
  return worst;
}

inline double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Plain loops over one gate block of a cell: W[:, gate*h + j], U[:, gate*h + j], b[gate*h + j].
inline double gate_pre(const nn::RnnCellParams& p, int gate, int j, const std::vector<double>& x,
                       const std::vector<double>& h) {
  const int H = static_cast<int>(p.hidden_dim());
  double a = p.b(gate * H + j);
  for (int k = 0; k < static_cast<int>(x.size()); ++k) a += x[k] * p.W(k, gate * H + j);
  for (int k = 0; k < H; ++k) a += h[k] * p.U(k, gate * H + j);
  return a;
}

inline std::vector<double> scalar_simple(const nn::RnnCellParams& p, const std::vector<double>& x,
                                         const std::vector<double>& h) {
  std::vector<double> out(h.size());
  for (int j = 0; j < static_cast<int>(h.size()); ++j) out[j] = std::tanh(gate_pre(p, 0, j, x, h));
  return out;
}

inline std::vector<double> scalar_gru(const nn::RnnCellParams& p, const std::vector<double>& x,
                                      const std::vector<double>& h) {
  const int H = static_cast<int>(h.size());
  std::vector<double> r(H), z(H), rh(H), out(H);
  for (int j = 0; j < H; ++j) {
    r[j] = sig(gate_pre(p, 0, j, x, h));
    z[j] = sig(gate_pre(p, 1, j, x, h));
    rh[j] = r[j] * h[j];
  }
  for (int j = 0; j < H; ++j) {
    double a = p.b(2 * H + j);
    for (int k = 0; k < static_cast<int>(x.size()); ++k) a += x[k] * p.W(k, 2 * H + j);
    for (int k = 0; k < H; ++k) a += rh[k] * p.U(k, 2 * H + j);
    out[j] = z[j] * h[j] + (1.0 - z[j]) * std::tanh(a);
  }
  return out;
}

inline std::pair<std::vector<double>, std::vector<double>> scalar_lstm(const nn::RnnCellParams& p,
                                                                      const std::vector<double>& x,
                                                                      const std::vector<double>& h,
                                                                      const std::vector<double>& c) {
  const int H = static_cast<int>(h.size());
  std::vector<double> hn(H), cn(H);
  for (int j = 0; j < H; ++j) {
    const double i = sig(gate_pre(p, 0, j, x, h)), f = sig(gate_pre(p, 1, j, x, h)),
                 o = sig(gate_pre(p, 2, j, x, h)), g = std::tanh(gate_pre(p, 3, j, x, h));
    cn[j] = f * c[j] + i * g;
    hn[j] = o * std::tanh(cn[j]);
  }
  return {hn, cn};
}

inline void randomize(nn::RnnCellParams& p, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < p.W.size(); ++i) p.W.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < p.U.size(); ++i) p.U.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b.data()[i] = u(rng);
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// r forced to 1 and z to 0 by saturating biases; the candidate block is shared with a simple cell.
inline double gru_reduction_gap(int input_dim, int hidden_dim, unsigned seed) {
  std::mt19937_64 rng(seed);
  nn::RnnCellParams gru(nn::CellKind::gru, input_dim, hidden_dim);
  randomize(gru, rng);
  const int H = hidden_dim;
  gru.b.segment(0, H).setConstant(40.0);
  gru.b.segment(H, H).setConstant(-40.0);
  nn::RnnCellParams simple(nn::CellKind::simple, input_dim, hidden_dim);
  simple.W = gru.W.rightCols(H);
  simple.U = gru.U.rightCols(H);
  simple.b = gru.b.tail(H);
  const auto x = random_vector(static_cast<std::size_t>(input_dim), rng);
  const auto h = random_vector(static_cast<std::size_t>(hidden_dim), rng, 0.9);
  const auto a = nn::gru_step(gru, x, h);
  const auto b = nn::simple_rnn_step(simple, x, h);
  double gap = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) gap = std::max(gap, std::abs(a[j] - b[j]));
  return gap;
}

}  // namespace mrfnet::check
