#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrfnet/nn/tensor.hpp"

namespace mrfnet::nn {

enum class CellKind { simple, lstm, gru };

inline int gate_count(CellKind k) {
  switch (k) {
    case CellKind::simple: return 1;
    case CellKind::gru: return 3;
    case CellKind::lstm: return 4;
  }
  return 0;
}

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::simple: return "rnn";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  if (s == "rnn" || s == "simple") return CellKind::simple;
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw std::invalid_argument("unknown recurrent cell '" + s + "'");
}

inline std::size_t cell_param_count(CellKind k, std::size_t input_dim, std::size_t hidden_dim) {
  return static_cast<std::size_t>(gate_count(k)) * (hidden_dim * (input_dim + hidden_dim) + hidden_dim);
}

// Non-owning view of one recurrent cell's parameters. Gate blocks are laid out
// side by side along the columns of W (input x G*h), U (h x G*h) and b (G*h):
//   simple: [candidate]   gru: [reset, update, candidate]   lstm: [input, forget, output, candidate]
template <typename S>
struct BasicCellView {
  CellKind kind;
  Eigen::Index input_dim;
  Eigen::Index hidden_dim;
  Eigen::Map<const Mat<S>> W;
  Eigen::Map<const Mat<S>> U;
  Eigen::Map<const Row<S>> b;
};
using CellView = BasicCellView<double>;

template <typename S>
struct BasicCellGradView {
  Eigen::Map<Mat<S>> W;
  Eigen::Map<Mat<S>> U;
  Eigen::Map<Row<S>> b;
};
using CellGradView = BasicCellGradView<double>;

/// Owning parameter set for a single recurrent cell.
struct RnnCellParams {
  CellKind kind = CellKind::simple;
  Tensor2 W;
  Tensor2 U;
  RowVec b;

  RnnCellParams(CellKind k, Eigen::Index input_dim, Eigen::Index hidden_dim)
      : kind(k),
        W(Tensor2::Zero(input_dim, gate_count(k) * hidden_dim)),
        U(Tensor2::Zero(hidden_dim, gate_count(k) * hidden_dim)),
        b(RowVec::Zero(gate_count(k) * hidden_dim)) {}

  Eigen::Index input_dim() const { return W.rows(); }
  Eigen::Index hidden_dim() const { return U.rows(); }

  CellView view() const {
    return {kind, input_dim(), hidden_dim(), ConstMatMap(W.data(), W.rows(), W.cols()),
            ConstMatMap(U.data(), U.rows(), U.cols()), ConstRowMap(b.data(), b.size())};
  }
};

// Activations of one time step, kept for backpropagation.
template <typename S>
struct BasicStepCache {
  Mat<S> x;
  Mat<S> h_prev;
  Mat<S> c_prev;  // lstm
  Mat<S> gates;   // post-activation gate values, same block layout as b
  Mat<S> h;
  Mat<S> tanh_c;  // lstm
  Mat<S> rh;      // gru: reset gate times previous hidden state
};
using StepCache = BasicStepCache<double>;

namespace cell_detail {
template <typename S>
void check_shapes(const BasicCellView<S>& p, const Mat<S>& x, const Mat<S>& h_prev) {
  if (x.cols() != p.input_dim || h_prev.cols() != p.hidden_dim || x.rows() != h_prev.rows())
    throw std::invalid_argument("recurrent cell: input " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + ", state " + std::to_string(h_prev.rows()) +
                                "x" + std::to_string(h_prev.cols()) + " do not fit cell (" +
                                std::to_string(p.input_dim) + " -> " + std::to_string(p.hidden_dim) + ")");
}
}  // namespace cell_detail

// Batched forward step. For lstm, c_prev/c_out carry the cell state; they are
// ignored for the other kinds. When cache is non-null it receives everything
// cell_backward needs.
template <typename S>
void cell_forward(const BasicCellView<S>& p, const Mat<S>& x, const Mat<S>& h_prev, const Mat<S>* c_prev,
                  Mat<S>& h_out, Mat<S>* c_out, BasicStepCache<S>* cache) {
  cell_detail::check_shapes(p, x, h_prev);
  const Eigen::Index H = p.hidden_dim;
  const S one(1);
  Mat<S> a = x * p.W;
  a.rowwise() += p.b;

  switch (p.kind) {
    case CellKind::simple: {
      a.noalias() += h_prev * p.U;
      h_out = a.array().tanh().matrix();
      if (cache) cache->gates = h_out;
      break;
    }
    case CellKind::gru: {
      a.leftCols(2 * H).noalias() += h_prev * p.U.leftCols(2 * H);
      a.leftCols(2 * H) = sigmoid(a.leftCols(2 * H).array()).matrix();
      const Mat<S> rh = (a.leftCols(H).array() * h_prev.array()).matrix();
      a.rightCols(H).noalias() += rh * p.U.rightCols(H);
      a.rightCols(H) = a.rightCols(H).array().tanh().matrix();
      const auto z = a.middleCols(H, H).array();
      h_out = (z * h_prev.array() + (one - z) * a.rightCols(H).array()).matrix();
      if (cache) {
        cache->gates = a;
        cache->rh = rh;
      }
      break;
    }
    case CellKind::lstm: {
      if (!c_prev || !c_out) throw std::invalid_argument("lstm step needs a cell state");
      if (c_prev->rows() != x.rows() || c_prev->cols() != H)
        throw std::invalid_argument("lstm step: cell state shape mismatch");
      a.noalias() += h_prev * p.U;
      a.leftCols(3 * H) = sigmoid(a.leftCols(3 * H).array()).matrix();
      a.rightCols(H) = a.rightCols(H).array().tanh().matrix();
      *c_out = (a.middleCols(H, H).array() * c_prev->array() +
                a.leftCols(H).array() * a.rightCols(H).array())
                   .matrix();
      Mat<S> tc = c_out->array().tanh().matrix();
      h_out = (a.middleCols(2 * H, H).array() * tc.array()).matrix();
      if (cache) {
        cache->gates = a;
        cache->c_prev = *c_prev;
        cache->tanh_c = std::move(tc);
      }
      break;
    }
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->h = h_out;
  }
}

// Batched backward step. dh (and dc for lstm) are gradients w.r.t. this step's
// outputs; parameter gradients accumulate into g; dh_prev/dc_prev are overwritten
// and must not alias dh/dc.
template <typename S>
void cell_backward(const BasicCellView<S>& p, const BasicStepCache<S>& cache, const Mat<S>& dh, const Mat<S>* dc,
                   BasicCellGradView<S>& g, Mat<S>& dh_prev, Mat<S>* dc_prev) {
  const Eigen::Index H = p.hidden_dim;
  const S one(1);
  const auto& gates = cache.gates;
  Mat<S> da(dh.rows(), gate_count(p.kind) * H);

  switch (p.kind) {
    case CellKind::simple: {
      da = (dh.array() * (one - gates.array().square())).matrix();
      g.U.noalias() += cache.h_prev.transpose() * da;
      dh_prev.noalias() = da * p.U.transpose();
      break;
    }
    case CellKind::gru: {
      const auto r = gates.leftCols(H).array();
      const auto z = gates.middleCols(H, H).array();
      const auto hc = gates.rightCols(H).array();
      const auto hp = cache.h_prev.array();
      const auto d = dh.array();
      da.rightCols(H) = (d * (one - z) * (one - hc.square())).matrix();
      da.middleCols(H, H) = (d * (hp - hc) * z * (one - z)).matrix();
      const Mat<S> drh = da.rightCols(H) * p.U.rightCols(H).transpose();
      da.leftCols(H) = (drh.array() * hp * r * (one - r)).matrix();
      g.U.leftCols(2 * H).noalias() += cache.h_prev.transpose() * da.leftCols(2 * H);
      g.U.rightCols(H).noalias() += cache.rh.transpose() * da.rightCols(H);
      dh_prev = (d * z + drh.array() * r).matrix();
      dh_prev.noalias() += da.leftCols(2 * H) * p.U.leftCols(2 * H).transpose();
      break;
    }
    case CellKind::lstm: {
      if (!dc_prev) throw std::invalid_argument("lstm backward needs a cell-state gradient");
      const auto i = gates.leftCols(H).array();
      const auto f = gates.middleCols(H, H).array();
      const auto o = gates.middleCols(2 * H, H).array();
      const auto gc = gates.rightCols(H).array();
      const auto tc = cache.tanh_c.array();
      Mat<S> dct = (dh.array() * o * (one - tc.square())).matrix();
      if (dc) dct += *dc;
      const auto dca = dct.array();
      da.leftCols(H) = (dca * gc * i * (one - i)).matrix();
      da.middleCols(H, H) = (dca * cache.c_prev.array() * f * (one - f)).matrix();
      da.middleCols(2 * H, H) = (dh.array() * tc * o * (one - o)).matrix();
      da.rightCols(H) = (dca * i * (one - gc.square())).matrix();
      *dc_prev = (dca * f).matrix();
      g.U.noalias() += cache.h_prev.transpose() * da;
      dh_prev.noalias() = da * p.U.transpose();
      break;
    }
  }
  g.W.noalias() += cache.x.transpose() * da;
  g.b += da.colwise().sum();
}

namespace cell_detail {
inline Tensor2 as_row(std::span<const double> v) {
  Tensor2 t(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = v[i];
  return t;
}
inline std::vector<double> to_vector(const Tensor2& t) { return {t.data(), t.data() + t.size()}; }
inline void require_kind(const RnnCellParams& p, CellKind k, const char* op) {
  if (p.kind != k) throw std::invalid_argument(std::string(op) + ": parameters belong to a " + to_string(p.kind) + " cell");
}
}  // namespace cell_detail

/// h_t = tanh(W x_t + U h_{t-1} + b)
inline std::vector<double> simple_rnn_step(const RnnCellParams& p, std::span<const double> x,
                                           std::span<const double> h_prev) {
  cell_detail::require_kind(p, CellKind::simple, "simple_rnn_step");
  Tensor2 h;
  cell_forward<double>(p.view(), cell_detail::as_row(x), cell_detail::as_row(h_prev), nullptr, h, nullptr, nullptr);
  return cell_detail::to_vector(h);
}

/// Returns (h_t, c_t).
inline std::pair<std::vector<double>, std::vector<double>> lstm_step(const RnnCellParams& p,
                                                                     std::span<const double> x,
                                                                     std::span<const double> h_prev,
                                                                     std::span<const double> c_prev) {
  cell_detail::require_kind(p, CellKind::lstm, "lstm_step");
  Tensor2 h, c;
  const Tensor2 cp = cell_detail::as_row(c_prev);
  cell_forward<double>(p.view(), cell_detail::as_row(x), cell_detail::as_row(h_prev), &cp, h, &c, nullptr);
  return {cell_detail::to_vector(h), cell_detail::to_vector(c)};
}

/// h_t = z * h_{t-1} + (1 - z) * tanh(W_h x + U_h (r * h_{t-1}) + b_h);
/// with r = 1 and z = 0 this is exactly simple_rnn_step on the candidate weights.
inline std::vector<double> gru_step(const RnnCellParams& p, std::span<const double> x,
                                    std::span<const double> h_prev) {
  cell_detail::require_kind(p, CellKind::gru, "gru_step");
  Tensor2 h;
  cell_forward<double>(p.view(), cell_detail::as_row(x), cell_detail::as_row(h_prev), nullptr, h, nullptr, nullptr);
  return cell_detail::to_vector(h);
}

}  // namespace mrfnet::nn
