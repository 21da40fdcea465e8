#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/dataset.hpp"
#include "mrfnet/labels.hpp"
#include "mrfnet/nn/adam.hpp"
#include "mrfnet/nn/checkpoint.hpp"
#include "mrfnet/nn/loss.hpp"
#include "mrfnet/nn/model.hpp"
#include "mrfnet/random.hpp"

namespace mrfnet {

struct TrainConfig {
  std::size_t batch_size = 50;
  double learning_rate = 1e-4;
  // When positive, the step size decays geometrically from learning_rate at the
  // first epoch to final_learning_rate at max_epochs. Zero keeps it constant.
  double final_learning_rate = 0.0;
  std::size_t patience_epochs = 100;
  double min_rel_improvement = 0.005;
  std::size_t max_epochs = 2000;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  double learning_rate_at(std::size_t epoch) const {
    if (final_learning_rate <= 0.0 || max_epochs < 2) return learning_rate;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(max_epochs - 1);
    return learning_rate * std::pow(final_learning_rate / learning_rate, t);
  }

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(final_learning_rate >= 0.0)) throw std::invalid_argument("final_learning_rate must be nonnegative");
    if (!(min_rel_improvement > 0.0 && min_rel_improvement < 1.0))
      throw std::invalid_argument("min_rel_improvement must lie in (0, 1)");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw std::invalid_argument("validation_fraction must lie in (0, 1)");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"final_learning_rate", c.final_learning_rate},
          {"patience_epochs", c.patience_epochs},
          {"min_rel_improvement", c.min_rel_improvement},
          {"max_epochs", c.max_epochs},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed}};
}

// Missing keys keep the values already in base.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.batch_size = j.value("batch_size", base.batch_size);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.final_learning_rate = j.value("final_learning_rate", base.final_learning_rate);
  base.patience_epochs = j.value("patience_epochs", base.patience_epochs);
  base.min_rel_improvement = j.value("min_rel_improvement", base.min_rel_improvement);
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.validation_fraction = j.value("validation_fraction", base.validation_fraction);
  base.seed = j.value("seed", base.seed);
  base.validate();
  return base;
}

/// Patience rule on validation loss. An epoch is a significant improvement when it
/// lowers the loss by at least min_rel_improvement relative to the loss at the last
/// significant improvement. Training stops once patience epochs pass without one.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_rel_improvement)
      : patience_(patience), min_rel_(min_rel_improvement) {}

  // Feed the loss of epoch `epoch` (1-based, increasing). Returns true to stop.
  bool update(std::size_t epoch, double loss) {
    last_significant_ = false;
    if (!has_reference_ || (reference_ > 0.0 && reference_ - loss >= min_rel_ * reference_)) {
      reference_ = loss;
      last_significant_epoch_ = epoch;
      has_reference_ = true;
      last_significant_ = true;
    }
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch;
    }
    return epoch - last_significant_epoch_ >= patience_;
  }

  bool last_was_significant() const { return last_significant_; }
  std::size_t last_significant_epoch() const { return last_significant_epoch_; }
  double best_loss() const { return best_loss_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double min_rel_;
  bool has_reference_ = false;
  bool last_significant_ = false;
  double reference_ = 0.0;
  std::size_t last_significant_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool significant = false;
};

struct TrainResult {
  nn::ModelCheckpoint checkpoint;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

namespace train_detail {
inline void gather(const Dataset& data, const LabelScaler& scaler, std::span<const std::size_t> idx, nn::Tensor2& x,
                   nn::Tensor2& y) {
  const auto n = static_cast<Eigen::Index>(data.n_samples);
  x.resize(static_cast<Eigen::Index>(idx.size()), n);
  y.resize(static_cast<Eigen::Index>(idx.size()), nn::kOutputDim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto sig = data.signal(idx[r]);
    const auto row = static_cast<Eigen::Index>(r);
    for (Eigen::Index k = 0; k < n; ++k) x(row, k) = static_cast<double>(sig[static_cast<std::size_t>(k)]);
    const auto t = scaler.scale(data.labels[idx[r]]);
    y(row, 0) = t[0];
    y(row, 1) = t[1];
  }
}
}  // namespace train_detail

/// Mean squared error in scaled units over the given signals, evaluated in fixed-size chunks.
inline double evaluate_loss(const nn::Model& model, const Dataset& data, const LabelScaler& scaler,
                            std::span<const std::size_t> idx) {
  constexpr std::size_t kChunk = 256;
  double sse = 0.0;
  nn::Tensor2 x, y;
  for (std::size_t i = 0; i < idx.size(); i += kChunk) {
    const auto part = idx.subspan(i, std::min(kChunk, idx.size() - i));
    train_detail::gather(data, scaler, part, x, y);
    sse += (model.forward(x) - y).squaredNorm();
  }
  return sse / static_cast<double>(idx.size() * nn::kOutputDim);
}

/// Adam on scaled-label MSE with a seeded validation split, per-epoch shuffling and
/// patience-based early stopping. Returns the checkpoint with the lowest validation loss.
inline TrainResult train(const nn::ModelSpec& spec, const TrainConfig& cfg, const Dataset& data,
                         const LabelScaler& scaler = {}, const TrainHooks& hooks = {}) {
  cfg.validate();
  spec.validate();
  scaler.validate();
  if (data.n_samples != static_cast<std::size_t>(spec.input_len))
    throw std::invalid_argument("dataset signals have " + std::to_string(data.n_samples) +
                                " samples but the model expects " + std::to_string(spec.input_len));
  const std::size_t total = data.size();
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(total)));
  if (n_val < 1 || total - n_val < 1)
    throw std::invalid_argument("dataset of " + std::to_string(total) + " signals is too small for a validation split");

  TrainResult result;
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  result.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  result.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(result.val_indices.begin(), result.val_indices.end());
  std::sort(result.train_indices.begin(), result.train_indices.end());

  nn::Model model(spec);
  model.initialize(derive_seed(cfg.seed, "init"));
  nn::AdamState adam(model.size(), cfg.learning_rate);
  nn::FlatVector<double> grad(model.size());
  std::vector<double> best_params(model.params().begin(), model.params().end());

  EarlyStopping stopper(cfg.patience_epochs, cfg.min_rel_improvement);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> epoch_order = result.train_indices;
  nn::Tensor2 x, y;
  nn::Tape tape;
  result.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(epoch_order.begin(), epoch_order.end(), shuffle_rng);
    adam.learning_rate = cfg.learning_rate_at(epoch);
    double sse = 0.0;
    for (std::size_t b = 0; b < epoch_order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> batch(epoch_order.data() + b,
                                               std::min(cfg.batch_size, epoch_order.size() - b));
      train_detail::gather(data, scaler, batch, x, y);
      const nn::Tensor2 pred = model.forward(x, &tape);
      const double loss = nn::mse_loss(pred, y);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(b));
      sse += loss * static_cast<double>(pred.size());
      model.backward(tape, nn::mse_gradient(pred, y), grad);
      nn::adam_update(adam, model.params(), grad);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sse / static_cast<double>(epoch_order.size() * nn::kOutputDim);
    rec.val_loss = evaluate_loss(model, data, scaler, result.val_indices);
    if (!std::isfinite(rec.val_loss))
      throw std::runtime_error("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    const bool stop = stopper.update(epoch, rec.val_loss);
    rec.significant = stopper.last_was_significant();
    if (stopper.best_epoch() == epoch) std::copy(model.params().begin(), model.params().end(), best_params.begin());
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) {
      result.stop_reason = "early_stopping";
      break;
    }
  }

  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  model.set_params(best_params);

  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : result.history) history.push_back({h.epoch, h.train_loss, h.val_loss});
  nlohmann::json meta{{"config", to_json(cfg)},
                      {"n_train", result.train_indices.size()},
                      {"n_validation", result.val_indices.size()},
                      {"epochs_run", result.history.size()},
                      {"best_epoch", result.best_epoch},
                      {"best_val_loss", result.best_val_loss},
                      {"stop_reason", result.stop_reason},
                      {"dataset_schedule_digest", data.schedule_digest},
                      {"history", history}};
  result.checkpoint = nn::ModelCheckpoint::from_model(model, scaler, cfg.seed, std::move(meta));
  return result;
}

/// The comparison set: ANN, 1D CNN and the three recurrent regressors.
inline std::vector<nn::ModelSpec> build_baselines(int input_len = 1750, int hidden_dim = 100, int chunk_size = 1) {
  return {nn::ModelSpec::dense(input_len), nn::ModelSpec::conv(input_len),
          nn::ModelSpec::recurrent(nn::CellKind::simple, input_len, hidden_dim, chunk_size),
          nn::ModelSpec::recurrent(nn::CellKind::lstm, input_len, hidden_dim, chunk_size),
          nn::ModelSpec::recurrent(nn::CellKind::gru, input_len, hidden_dim, chunk_size)};
}

}  // namespace mrfnet
