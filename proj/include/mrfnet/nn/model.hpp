#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/nn/cells.hpp"
#include "mrfnet/nn/tensor.hpp"
#include "mrfnet/random.hpp"

namespace mrfnet::nn {

enum class ModelKind { rnn_regressor, ann, cnn1d };

inline constexpr int kOutputDim = 2;

/// Architecture descriptor. Every model maps input_len samples to (T1, T2) in scaled units.
struct ModelSpec {
  ModelKind kind = ModelKind::rnn_regressor;
  int input_len = 1750;

  // rnn_regressor: input_len / chunk_size steps of chunk_size samples each.
  CellKind cell = CellKind::gru;
  int hidden_dim = 100;
  int chunk_size = 1;

  // ann: fully connected ReLU layers.
  std::vector<int> dense_layers{300, 300};

  // cnn1d: strided ReLU convolutions, zero padding kernel/2, then global average pooling.
  std::vector<int> conv_channels{16, 32, 64, 128};
  int conv_kernel = 5;
  int conv_stride = 2;

  static ModelSpec recurrent(CellKind cell, int input_len = 1750, int hidden_dim = 100, int chunk_size = 1) {
    ModelSpec s;
    s.kind = ModelKind::rnn_regressor;
    s.cell = cell;
    s.input_len = input_len;
    s.hidden_dim = hidden_dim;
    s.chunk_size = chunk_size;
    return s;
  }
  static ModelSpec dense(int input_len = 1750, std::vector<int> layers = {300, 300}) {
    ModelSpec s;
    s.kind = ModelKind::ann;
    s.input_len = input_len;
    s.dense_layers = std::move(layers);
    return s;
  }
  static ModelSpec conv(int input_len = 1750, std::vector<int> channels = {16, 32, 64, 128}, int kernel = 5,
                        int stride = 2) {
    ModelSpec s;
    s.kind = ModelKind::cnn1d;
    s.input_len = input_len;
    s.conv_channels = std::move(channels);
    s.conv_kernel = kernel;
    s.conv_stride = stride;
    return s;
  }

  // Short method name used on the command line and in reports.
  std::string name() const {
    switch (kind) {
      case ModelKind::rnn_regressor: return to_string(cell);
      case ModelKind::ann: return "ann";
      case ModelKind::cnn1d: return "cnn";
    }
    return "?";
  }

  int steps() const { return input_len / chunk_size; }

  void validate() const {
    if (input_len < 1) throw std::invalid_argument("model input length must be positive");
    switch (kind) {
      case ModelKind::rnn_regressor:
        if (hidden_dim < 1 || chunk_size < 1) throw std::invalid_argument("hidden_dim and chunk_size must be positive");
        if (input_len % chunk_size != 0)
          throw std::invalid_argument("input length " + std::to_string(input_len) +
                                      " is not a multiple of chunk size " + std::to_string(chunk_size));
        break;
      case ModelKind::ann:
        for (int w : dense_layers)
          if (w < 1) throw std::invalid_argument("dense layer widths must be positive");
        break;
      case ModelKind::cnn1d:
        if (conv_channels.empty()) throw std::invalid_argument("cnn needs at least one convolution");
        for (int c : conv_channels)
          if (c < 1) throw std::invalid_argument("conv channel counts must be positive");
        if (conv_kernel < 1 || conv_stride < 1) throw std::invalid_argument("conv kernel and stride must be positive");
        break;
    }
  }
};

inline ModelSpec model_spec_for(const std::string& name, int input_len = 1750) {
  if (name == "ann") return ModelSpec::dense(input_len);
  if (name == "cnn") return ModelSpec::conv(input_len);
  return ModelSpec::recurrent(cell_kind_from_string(name), input_len);
}

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j{{"kind", s.kind == ModelKind::rnn_regressor ? "rnn_regressor"
                            : s.kind == ModelKind::ann       ? "ann"
                                                             : "cnn1d"},
                   {"input_len", s.input_len},
                   {"output_dim", kOutputDim}};
  switch (s.kind) {
    case ModelKind::rnn_regressor:
      j["cell"] = to_string(s.cell);
      j["hidden_dim"] = s.hidden_dim;
      j["chunk_size"] = s.chunk_size;
      break;
    case ModelKind::ann: j["dense_layers"] = s.dense_layers; break;
    case ModelKind::cnn1d:
      j["conv_channels"] = s.conv_channels;
      j["conv_kernel"] = s.conv_kernel;
      j["conv_stride"] = s.conv_stride;
      break;
  }
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  const auto kind = j.at("kind").get<std::string>();
  s.input_len = j.at("input_len").get<int>();
  if (kind == "rnn_regressor") {
    s.kind = ModelKind::rnn_regressor;
    s.cell = cell_kind_from_string(j.at("cell").get<std::string>());
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.chunk_size = j.value("chunk_size", 1);
  } else if (kind == "ann") {
    s.kind = ModelKind::ann;
    s.dense_layers = j.at("dense_layers").get<std::vector<int>>();
  } else if (kind == "cnn1d") {
    s.kind = ModelKind::cnn1d;
    s.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    s.conv_kernel = j.at("conv_kernel").get<int>();
    s.conv_stride = j.at("conv_stride").get<int>();
  } else {
    throw std::invalid_argument("unknown model kind '" + kind + "'");
  }
  s.validate();
  return s;
}

/// One named weight or bias block inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  std::size_t offset;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

inline int conv_output_length(int length, int kernel, int stride) {
  const int pad = kernel / 2;
  return (length + 2 * pad - kernel) / stride + 1;
}

// Parameters in declaration order.
inline std::vector<ParamBlock> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) {
    blocks.push_back({std::move(name), r, c, offset});
    offset += static_cast<std::size_t>(r * c);
  };
  switch (spec.kind) {
    case ModelKind::rnn_regressor: {
      const Eigen::Index gh = gate_count(spec.cell) * spec.hidden_dim;
      add("cell.W", spec.chunk_size, gh);
      add("cell.U", spec.hidden_dim, gh);
      add("cell.b", 1, gh);
      add("head.W", spec.hidden_dim, kOutputDim);
      add("head.b", 1, kOutputDim);
      break;
    }
    case ModelKind::ann: {
      int in = spec.input_len;
      for (std::size_t l = 0; l < spec.dense_layers.size(); ++l) {
        add("dense" + std::to_string(l) + ".W", in, spec.dense_layers[l]);
        add("dense" + std::to_string(l) + ".b", 1, spec.dense_layers[l]);
        in = spec.dense_layers[l];
      }
      add("head.W", in, kOutputDim);
      add("head.b", 1, kOutputDim);
      break;
    }
    case ModelKind::cnn1d: {
      int in = 1;
      for (std::size_t l = 0; l < spec.conv_channels.size(); ++l) {
        add("conv" + std::to_string(l) + ".W", spec.conv_kernel * in, spec.conv_channels[l]);
        add("conv" + std::to_string(l) + ".b", 1, spec.conv_channels[l]);
        in = spec.conv_channels[l];
      }
      add("head.W", in, kOutputDim);
      add("head.b", 1, kOutputDim);
      break;
    }
  }
  return blocks;
}

/// Exact number of trainable parameters, head included.
inline std::size_t param_count(const ModelSpec& spec) {
  const auto layout = parameter_layout(spec);
  return layout.back().offset + layout.back().size();
}

/// Activations recorded by a forward pass for the matching backward pass.
template <typename S>
struct BasicTape {
  bool recorded = false;
  ModelKind kind = ModelKind::rnn_regressor;
  Eigen::Index batch = 0;
  // rnn
  std::vector<BasicStepCache<S>> steps;
  // ann / cnn: layer inputs (post-activation) and pre-activations
  std::vector<Mat<S>> inputs;
  std::vector<Mat<S>> pre;
  std::vector<int> lengths;  // cnn sequence length entering each conv layer
  Mat<S> features;          // input to the head
};

/// Regression network with all parameters in one flat vector.
template <typename S>
class BasicModel {
 public:
  explicit BasicModel(ModelSpec spec)
      : spec_(std::move(spec)), layout_(parameter_layout(spec_)), params_(param_count(spec_), S(0)) {}

  const ModelSpec& spec() const { return spec_; }
  const std::vector<ParamBlock>& layout() const { return layout_; }
  std::size_t size() const { return params_.size(); }
  std::span<S> params() { return params_; }
  std::span<const S> params() const { return params_; }

  void set_params(std::span<const S> values) {
    if (values.size() != params_.size())
      throw std::invalid_argument("parameter vector has " + std::to_string(values.size()) + " entries, model needs " +
                                  std::to_string(params_.size()));
    std::copy(values.begin(), values.end(), params_.begin());
  }

  // Glorot-uniform input and dense weights, orthogonal recurrent blocks,
  // zero biases, forget-gate bias +1 for lstm.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), S(0));
    switch (spec_.kind) {
      case ModelKind::rnn_regressor: {
        const Eigen::Index H = spec_.hidden_dim;
        auto W = block(0);
        glorot_uniform(W, static_cast<double>(W.rows()), static_cast<double>(W.cols()), rng);
        auto U = block(1);
        for (int g = 0; g < gate_count(spec_.cell); ++g) orthogonal(U.middleCols(g * H, H), rng);
        if (spec_.cell == CellKind::lstm) block(2).middleCols(H, H).setConstant(S(1));
        auto head = block(3);
        glorot_uniform(head, static_cast<double>(H), kOutputDim, rng);
        break;
      }
      case ModelKind::ann:
        for (std::size_t i = 0; i < layout_.size(); i += 2) {
          auto W = block(i);
          glorot_uniform(W, static_cast<double>(W.rows()), static_cast<double>(W.cols()), rng);
        }
        break;
      case ModelKind::cnn1d:
        for (std::size_t i = 0; i < layout_.size(); i += 2) {
          auto W = block(i);
          const bool head = i + 2 == layout_.size();
          const double k = head ? 1.0 : spec_.conv_kernel;
          glorot_uniform(W, static_cast<double>(W.rows()), static_cast<double>(W.cols()) * k, rng);
        }
        break;
    }
  }

  Eigen::Map<Mat<S>> block(std::size_t i) {
    const auto& b = layout_.at(i);
    return {params_.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<const Mat<S>> block(std::size_t i) const { return cblock(params_, i); }

  /// Forward pass over a batch (rows = signals). Returns batch x 2.
  Mat<S> forward(const Mat<S>& x, BasicTape<S>* tape = nullptr) const {
    if (x.cols() != spec_.input_len)
      throw std::invalid_argument("signal length " + std::to_string(x.cols()) + " does not match model input length " +
                                  std::to_string(spec_.input_len));
    if (tape) {
      *tape = BasicTape<S>{};
      tape->kind = spec_.kind;
      tape->batch = x.rows();
    }
    Mat<S> features;
    switch (spec_.kind) {
      case ModelKind::rnn_regressor: features = forward_rnn(x, tape); break;
      case ModelKind::ann: features = forward_dense(x, tape); break;
      case ModelKind::cnn1d: features = forward_conv(x, tape); break;
    }
    const std::size_t nb = layout_.size();
    Mat<S> y = features * block(nb - 2);
    y.rowwise() += Eigen::Map<const Row<S>>(params_.data() + layout_[nb - 1].offset, kOutputDim);
    if (tape) {
      tape->features = std::move(features);
      tape->recorded = true;
    }
    return y;
  }

  /// Gradient of a loss w.r.t. all parameters, given d(loss)/d(output) for the
  /// batch recorded in tape. grad is overwritten.
  void backward(const BasicTape<S>& tape, const Mat<S>& d_out, std::span<S> grad) const {
    if (!tape.recorded || tape.kind != spec_.kind)
      throw std::logic_error("backward called without recorded forward activations");
    if (d_out.rows() != tape.batch || d_out.cols() != kOutputDim)
      throw std::invalid_argument("output gradient shape does not match recorded batch");
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has the wrong size");
    std::fill(grad.begin(), grad.end(), S(0));

    const std::size_t nb = layout_.size();
    gblock(grad, nb - 2).noalias() += tape.features.transpose() * d_out;
    gblock(grad, nb - 1) += d_out.colwise().sum();
    const Mat<S> d_features = d_out * block(nb - 2).transpose();

    switch (spec_.kind) {
      case ModelKind::rnn_regressor: backward_rnn(tape, d_features, grad); break;
      case ModelKind::ann: backward_dense(tape, d_features, grad); break;
      case ModelKind::cnn1d: backward_conv(tape, d_features, grad); break;
    }
  }

  /// Single-signal prediction in scaled label units.
  template <typename T>
  std::array<S, 2> predict(std::span<const T> signal) const {
    Mat<S> x(1, static_cast<Eigen::Index>(signal.size()));
    for (std::size_t i = 0; i < signal.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = static_cast<S>(signal[i]);
    const Mat<S> y = forward(x);
    return {y(0, 0), y(0, 1)};
  }

 private:
  Eigen::Map<const Mat<S>> cblock(std::span<const S> p, std::size_t i) const {
    const auto& b = layout_.at(i);
    return {p.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<Mat<S>> gblock(std::span<S> g, std::size_t i) const {
    const auto& b = layout_.at(i);
    return {g.data() + b.offset, b.rows, b.cols};
  }

  BasicCellView<S> cell_view() const {
    return {spec_.cell, spec_.chunk_size, spec_.hidden_dim, block(0), block(1),
            Eigen::Map<const Row<S>>(params_.data() + layout_[2].offset, layout_[2].cols)};
  }

  Mat<S> forward_rnn(const Mat<S>& x, BasicTape<S>* tape) const {
    const BasicCellView<S> cell = cell_view();
    const Eigen::Index B = x.rows(), H = spec_.hidden_dim, c = spec_.chunk_size;
    const int steps = spec_.steps();
    Mat<S> h = Mat<S>::Zero(B, H), h_next;
    Mat<S> cs = Mat<S>::Zero(B, H), cs_next;
    const bool lstm = spec_.cell == CellKind::lstm;
    if (tape) tape->steps.resize(static_cast<std::size_t>(steps));
    Mat<S> xt;
    for (int t = 0; t < steps; ++t) {
      xt = x.middleCols(t * c, c);
      cell_forward(cell, xt, h, lstm ? &cs : nullptr, h_next, lstm ? &cs_next : nullptr,
                   tape ? &tape->steps[static_cast<std::size_t>(t)] : nullptr);
      std::swap(h, h_next);
      if (lstm) std::swap(cs, cs_next);
    }
    return h;
  }

  void backward_rnn(const BasicTape<S>& tape, const Mat<S>& d_h_final, std::span<S> grad) const {
    const BasicCellView<S> cell = cell_view();
    BasicCellGradView<S> g{gblock(grad, 0), gblock(grad, 1), Eigen::Map<Row<S>>(grad.data() + layout_[2].offset, layout_[2].cols)};
    const bool lstm = spec_.cell == CellKind::lstm;
    Mat<S> dh = d_h_final, dh_prev;
    Mat<S> dc = Mat<S>::Zero(dh.rows(), dh.cols()), dc_prev;
    for (auto t = static_cast<std::ptrdiff_t>(tape.steps.size()) - 1; t >= 0; --t) {
      cell_backward(cell, tape.steps[static_cast<std::size_t>(t)], dh, lstm ? &dc : nullptr, g, dh_prev,
                    lstm ? &dc_prev : nullptr);
      std::swap(dh, dh_prev);
      if (lstm) std::swap(dc, dc_prev);
    }
  }

  Mat<S> forward_dense(const Mat<S>& x, BasicTape<S>* tape) const {
    Mat<S> a = x;
    for (std::size_t l = 0; l < spec_.dense_layers.size(); ++l) {
      Mat<S> z = a * block(2 * l);
      z.rowwise() += Eigen::Map<const Row<S>>(params_.data() + layout_[2 * l + 1].offset, layout_[2 * l + 1].cols);
      Mat<S> next = z.cwiseMax(S(0));
      if (tape) {
        tape->inputs.push_back(std::move(a));
        tape->pre.push_back(std::move(z));
      }
      a = std::move(next);
    }
    return a;
  }

  void backward_dense(const BasicTape<S>& tape, const Mat<S>& d_features, std::span<S> grad) const {
    Mat<S> da = d_features;
    for (auto l = static_cast<std::ptrdiff_t>(spec_.dense_layers.size()) - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      const Mat<S> dz = (da.array() * (tape.pre[li].array() > S(0)).template cast<S>()).matrix();
      gblock(grad, 2 * li).noalias() += tape.inputs[li].transpose() * dz;
      gblock(grad, 2 * li + 1) += dz.colwise().sum();
      if (l > 0) da.noalias() = dz * block(2 * li).transpose();
    }
  }

  // Activations are channel-last: row (b * length + position), column channel.
  static Mat<S> im2col(const Mat<S>& act, Eigen::Index batch, int length, int out_len, int kernel, int stride) {
    const Eigen::Index ch = act.cols();
    const int pad = kernel / 2;
    Mat<S> cols = Mat<S>::Zero(batch * out_len, kernel * ch);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int p = 0; p < out_len; ++p)
        for (int k = 0; k < kernel; ++k) {
          const int pos = p * stride - pad + k;
          if (pos < 0 || pos >= length) continue;
          cols.row(b * out_len + p).segment(k * ch, ch) = act.row(b * length + pos);
        }
    return cols;
  }

  static void col2im_add(const Mat<S>& dcols, Mat<S>& dact, Eigen::Index batch, int length, int out_len, int kernel,
                         int stride) {
    const Eigen::Index ch = dact.cols();
    const int pad = kernel / 2;
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int p = 0; p < out_len; ++p)
        for (int k = 0; k < kernel; ++k) {
          const int pos = p * stride - pad + k;
          if (pos < 0 || pos >= length) continue;
          dact.row(b * length + pos) += dcols.row(b * out_len + p).segment(k * ch, ch);
        }
  }

  Mat<S> forward_conv(const Mat<S>& x, BasicTape<S>* tape) const {
    const Eigen::Index B = x.rows();
    int length = spec_.input_len;
    Mat<S> act = Eigen::Map<const Mat<S>>(x.data(), B * length, 1);
    for (std::size_t l = 0; l < spec_.conv_channels.size(); ++l) {
      const int out_len = conv_output_length(length, spec_.conv_kernel, spec_.conv_stride);
      Mat<S> cols = im2col(act, B, length, out_len, spec_.conv_kernel, spec_.conv_stride);
      Mat<S> z = cols * block(2 * l);
      z.rowwise() += Eigen::Map<const Row<S>>(params_.data() + layout_[2 * l + 1].offset, layout_[2 * l + 1].cols);
      if (tape) {
        tape->inputs.push_back(std::move(cols));
        tape->lengths.push_back(length);
      }
      act = z.cwiseMax(S(0));
      if (tape) tape->pre.push_back(std::move(z));
      length = out_len;
    }
    if (tape) tape->lengths.push_back(length);
    const Eigen::Index C = act.cols();
    Mat<S> pooled(B, C);
    for (Eigen::Index b = 0; b < B; ++b) pooled.row(b) = act.middleRows(b * length, length).colwise().mean();
    return pooled;
  }

  void backward_conv(const BasicTape<S>& tape, const Mat<S>& d_pooled, std::span<S> grad) const {
    const Eigen::Index B = tape.batch;
    const std::size_t nl = spec_.conv_channels.size();
    int length = tape.lengths[nl];
    Mat<S> da(B * length, d_pooled.cols());
    for (Eigen::Index b = 0; b < B; ++b)
      da.middleRows(b * length, length).rowwise() = d_pooled.row(b) / S(length);
    for (auto l = static_cast<std::ptrdiff_t>(nl) - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      const Mat<S> dz = (da.array() * (tape.pre[li].array() > S(0)).template cast<S>()).matrix();
      gblock(grad, 2 * li).noalias() += tape.inputs[li].transpose() * dz;
      gblock(grad, 2 * li + 1) += dz.colwise().sum();
      if (l == 0) break;
      const int in_len = tape.lengths[li];
      const Mat<S> dcols = dz * block(2 * li).transpose();
      Mat<S> dprev = Mat<S>::Zero(B * in_len, spec_.conv_channels[li - 1]);
      col2im_add(dcols, dprev, B, in_len, length, spec_.conv_kernel, spec_.conv_stride);
      da = std::move(dprev);
      length = in_len;
    }
  }

  ModelSpec spec_;
  std::vector<ParamBlock> layout_;
  FlatVector<S> params_;
};

using Tape = BasicTape<double>;
using Model = BasicModel<double>;

/// forward on one signal with an explicit parameter vector.
inline std::array<double, 2> forward_sequence(const ModelSpec& spec, std::span<const double> params,
                                              std::span<const double> signal) {
  Model m(spec);
  m.set_params(params);
  return m.predict(signal);
}

}  // namespace mrfnet::nn
