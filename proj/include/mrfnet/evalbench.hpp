#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/dataset.hpp"
#include "mrfnet/dictionary.hpp"
#include "mrfnet/digest.hpp"
#include "mrfnet/labels.hpp"
#include "mrfnet/nn/checkpoint.hpp"
#include "mrfnet/parallel.hpp"
#include "mrfnet/random.hpp"

namespace mrfnet {

struct ErrorStat {
  double value = 0.0;
  double std = 0.0;
};

namespace eval_detail {
inline void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw std::invalid_argument("prediction and truth lengths differ (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  if (a == 0) throw std::invalid_argument("need at least one prediction");
}

// Mean and population standard deviation.
inline ErrorStat mean_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

inline std::vector<double> abs_errors(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred.size(), truth.size());
  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(pred[i] - truth[i]);
  return e;
}
}  // namespace eval_detail

/// Mean and population std of |pred - truth|.
inline ErrorStat mae(std::span<const double> pred, std::span<const double> truth) {
  const auto e = eval_detail::abs_errors(pred, truth);
  return eval_detail::mean_std(e);
}

/// sqrt(mean squared error); std is the population std of the per-sample |error|.
inline ErrorStat rmse(std::span<const double> pred, std::span<const double> truth) {
  const auto e = eval_detail::abs_errors(pred, truth);
  double sq = 0.0;
  for (double x : e) sq += x * x;
  return {std::sqrt(sq / static_cast<double>(e.size())), eval_detail::mean_std(e).std};
}

inline ErrorStat mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  return mae(std::span<const double>(pred), std::span<const double>(truth));
}
inline ErrorStat rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  return rmse(std::span<const double>(pred), std::span<const double>(truth));
}

/// Single-signal predictor under evaluation.
class Method {
 public:
  virtual ~Method() = default;
  virtual std::string name() const = 0;
  virtual std::size_t input_len() const = 0;
  virtual bool ready() const { return true; }
  virtual TissueParams predict_one(std::span<const float> signal) const = 0;

  virtual std::vector<TissueParams> predict_all(const Dataset& data) const {
    std::vector<TissueParams> out(data.size());
    parallel_for(data.size(), [&](std::size_t i) { out[i] = predict_one(data.signal(i)); });
    return out;
  }
};

/// Exhaustive dictionary matching.
class InnerProductMethod : public Method {
 public:
  explicit InnerProductMethod(std::shared_ptr<const Dictionary> dict, std::string name = "inner_product")
      : dict_(std::move(dict)), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  std::size_t input_len() const override { return dict_ ? dict_->n_samples : 0; }
  bool ready() const override { return dict_ && dict_->n_atoms > 0; }
  TissueParams predict_one(std::span<const float> signal) const override { return match(*dict_, signal).params; }

  std::vector<TissueParams> predict_all(const Dataset& data) const override {
    const auto batch = match_batch(*dict_, std::span<const float>(data.signals), data.size());
    std::vector<TissueParams> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch[i].result) throw std::runtime_error("signal " + std::to_string(i) + ": " + batch[i].error);
      out[i] = batch[i].result->params;
    }
    return out;
  }

  const Dictionary& dictionary() const { return *dict_; }

 private:
  std::shared_ptr<const Dictionary> dict_;
  std::string name_;
};

/// Trained regressor; outputs are unscaled back to milliseconds.
class NetworkMethod : public Method {
 public:
  explicit NetworkMethod(const nn::ModelCheckpoint& ckpt, std::string name = {})
      : model_(ckpt.to_model()), scaler_(ckpt.scaler), name_(name.empty() ? ckpt.spec.name() : std::move(name)) {}

  std::string name() const override { return name_; }
  std::size_t input_len() const override { return static_cast<std::size_t>(model_.spec().input_len); }

  TissueParams predict_one(std::span<const float> signal) const override {
    return scaler_.unscale(model_.predict(signal));
  }

  std::vector<TissueParams> predict_all(const Dataset& data) const override {
    constexpr std::size_t kChunk = 128;
    const std::size_t n = data.size();
    const auto len = static_cast<Eigen::Index>(data.n_samples);
    std::vector<TissueParams> out(n);
    parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t c) {
      const std::size_t begin = c * kChunk, end = std::min(n, begin + kChunk);
      nn::Tensor2 x(static_cast<Eigen::Index>(end - begin), len);
      for (std::size_t i = begin; i < end; ++i) {
        const auto sig = data.signal(i);
        for (Eigen::Index k = 0; k < len; ++k)
          x(static_cast<Eigen::Index>(i - begin), k) = static_cast<double>(sig[static_cast<std::size_t>(k)]);
      }
      const nn::Tensor2 y = model_.forward(x);
      for (std::size_t i = begin; i < end; ++i) {
        const auto r = static_cast<Eigen::Index>(i - begin);
        out[i] = scaler_.unscale({y(r, 0), y(r, 1)});
      }
    });
    return out;
  }

  const nn::Model& model() const { return model_; }

 private:
  nn::Model model_;
  LabelScaler scaler_;
  std::string name_;
};

/// Looks each signal up in the test set itself and returns its true label.
class IdentityOracle : public Method {
 public:
  explicit IdentityOracle(std::shared_ptr<const Dataset> data) : data_(std::move(data)) {}

  std::string name() const override { return "identity_oracle"; }
  std::size_t input_len() const override { return data_ ? data_->n_samples : 0; }
  bool ready() const override { return data_ != nullptr; }

  TissueParams predict_one(std::span<const float> signal) const override {
    for (std::size_t i = 0; i < data_->size(); ++i) {
      const auto row = data_->signal(i);
      if (std::equal(row.begin(), row.end(), signal.begin(), signal.end())) return data_->labels[i];
    }
    throw std::runtime_error("identity oracle: signal not present in reference set");
  }

 private:
  std::shared_ptr<const Dataset> data_;
};

struct TimingStats {
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  std::size_t trials = 0;
};

namespace eval_detail {
inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

class SingleWorker {
 public:
  SingleWorker() : saved_(max_threads()) { set_max_threads(1); }
  ~SingleWorker() { set_max_threads(saved_); }
  SingleWorker(const SingleWorker&) = delete;
  SingleWorker& operator=(const SingleWorker&) = delete;

 private:
  unsigned saved_;
};
}  // namespace eval_detail

/// Wall-clock latency of predict_one on one signal: 10 warmup calls, then n_trials timed calls.
inline TimingStats time_single_prediction(const Method& method, std::span<const float> signal,
                                          std::size_t n_trials = 100) {
  if (!method.ready()) throw std::logic_error("method '" + method.name() + "' is not initialised");
  if (n_trials < 10) throw std::invalid_argument("timing needs at least 10 trials");
  if (signal.size() != method.input_len())
    throw std::invalid_argument("timing signal has " + std::to_string(signal.size()) + " samples, method '" +
                                method.name() + "' expects " + std::to_string(method.input_len()));
  eval_detail::SingleWorker pin;
  volatile double sink = 0.0;
  for (int i = 0; i < 10; ++i) sink = sink + method.predict_one(signal).t1_ms;
  std::vector<double> ms(n_trials);
  for (auto& t : ms) {
    const auto start = std::chrono::steady_clock::now();
    sink = sink + method.predict_one(signal).t1_ms;
    t = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  (void)sink;
  return {eval_detail::quantile(ms, 0.5), eval_detail::quantile(ms, 0.75) - eval_detail::quantile(ms, 0.25),
          n_trials};
}

struct MethodRow {
  std::string method;
  std::string error;  // empty on success
  ErrorStat t1_mae, t1_rmse, t2_mae, t2_rmse;
  TimingStats timing;
  std::vector<TissueParams> predictions;

  bool ok() const { return error.empty(); }
};

struct EvalOptions {
  std::size_t batch_size = 500;
  std::size_t timing_trials = 100;
  bool time_methods = true;
  nlohmann::json metadata = nlohmann::json::object();
};

struct EvalReport {
  std::vector<MethodRow> rows;
  std::vector<TissueParams> truth;
  std::size_t batch_size = 500;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace eval_detail {
// Order used to cut the test set into batches. It depends only on the
// (truth, prediction) values, so the statistics do not depend on the order of the test set.
inline std::vector<std::size_t> canonical_order(std::span<const TissueParams> truth,
                                                std::span<const TissueParams> pred) {
  struct Key {
    std::uint64_t hash;
    double t1, t2, p1, p2;
    auto operator<=>(const Key&) const = default;
  };
  std::vector<Key> keys(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::uint64_t h = splitmix64(std::bit_cast<std::uint64_t>(truth[i].t1_ms));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(truth[i].t2_ms));
    keys[i] = {h, truth[i].t1_ms, truth[i].t2_ms, pred[i].t1_ms, pred[i].t2_ms};
  }
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  return order;
}

struct ParamStats {
  ErrorStat mae, rmse;
};

// Values are over the whole set. With two or more full batches the std is taken
// across per-batch values; otherwise it falls back to the per-sample spread.
inline ParamStats batched_stats(std::span<const double> pred, std::span<const double> truth,
                                std::span<const std::size_t> order, std::size_t batch_size) {
  ParamStats s{mae(pred, truth), rmse(pred, truth)};
  const std::size_t n_batches = pred.size() / batch_size;
  if (n_batches < 2) return s;
  std::vector<double> batch_mae(n_batches), batch_rmse(n_batches), p(batch_size), t(batch_size);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (std::size_t k = 0; k < batch_size; ++k) {
      const std::size_t i = order[b * batch_size + k];
      p[k] = pred[i];
      t[k] = truth[i];
    }
    batch_mae[b] = mae(p, t).value;
    batch_rmse[b] = rmse(p, t).value;
  }
  s.mae.std = mean_std(batch_mae).std;
  s.rmse.std = mean_std(batch_rmse).std;
  return s;
}
}  // namespace eval_detail

/// Fills the error statistics of a row from its predictions.
inline void compute_row_stats(MethodRow& row, std::span<const TissueParams> truth, std::size_t batch_size) {
  eval_detail::check_lengths(row.predictions.size(), truth.size());
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  const auto order = eval_detail::canonical_order(truth, row.predictions);
  std::vector<double> p1, p2, t1, t2;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    p1.push_back(row.predictions[i].t1_ms);
    p2.push_back(row.predictions[i].t2_ms);
    t1.push_back(truth[i].t1_ms);
    t2.push_back(truth[i].t2_ms);
  }
  const auto s1 = eval_detail::batched_stats(p1, t1, order, batch_size);
  const auto s2 = eval_detail::batched_stats(p2, t2, order, batch_size);
  row.t1_mae = s1.mae;
  row.t1_rmse = s1.rmse;
  row.t2_mae = s2.mae;
  row.t2_rmse = s2.rmse;
}

inline std::string dataset_digest(const Dataset& data) {
  std::ostringstream buf;
  write_dataset_binary(data, buf);
  return sha256_hex(buf.str());
}

/// Runs every method on every signal. A failing method gets an error row instead of aborting.
inline EvalReport evaluate(const std::vector<const Method*>& methods, const Dataset& data,
                           const EvalOptions& options = {}) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  EvalReport report;
  report.truth = data.labels;
  report.batch_size = options.batch_size;
  report.metadata = options.metadata;
  report.metadata["dataset_digest"] = dataset_digest(data);
  report.metadata["n_signals"] = data.size();
  report.metadata["n_samples"] = data.n_samples;
  report.metadata["dataset_seed"] = data.seed;
  report.metadata["noise_sigma"] = data.noise_sigma;

  // Timing always uses the same test signal regardless of test-set order.
  const auto first = eval_detail::canonical_order(data.labels, data.labels);
  const auto timing_signal = data.signal(first.front());

  for (const Method* m : methods) {
    MethodRow row;
    row.method = m->name();
    try {
      if (!m->ready()) throw std::logic_error("method is not initialised");
      if (m->input_len() != data.n_samples)
        throw std::invalid_argument("method expects " + std::to_string(m->input_len()) +
                                    " samples but test signals have " + std::to_string(data.n_samples));
      row.predictions = m->predict_all(data);
      compute_row_stats(row, report.truth, options.batch_size);
      if (options.time_methods) row.timing = time_single_prediction(*m, timing_signal, options.timing_trials);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.predictions.clear();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"method", row.method}};
    if (!row.ok()) {
      j["error"] = row.error;
    } else {
      j["t1_mae_ms"] = row.t1_mae.value;
      j["t1_mae_std"] = row.t1_mae.std;
      j["t1_rmse_ms"] = row.t1_rmse.value;
      j["t1_rmse_std"] = row.t1_rmse.std;
      j["t2_mae_ms"] = row.t2_mae.value;
      j["t2_mae_std"] = row.t2_mae.std;
      j["t2_rmse_ms"] = row.t2_rmse.value;
      j["t2_rmse_std"] = row.t2_rmse.std;
      j["single_prediction_ms"] = row.timing.median_ms;
      j["single_prediction_iqr_ms"] = row.timing.iqr_ms;
      j["timing_trials"] = row.timing.trials;
    }
    rows.push_back(j);
  }
  return {{"format", "mrfnet-eval"},
          {"version", 1},
          {"protocol",
           {{"batch_size", r.batch_size},
            {"statistics",
             "values over the full test set; std across equal batches cut from a value-derived "
             "order (per-sample |error| std when fewer than two batches)"},
            {"timing", "median and IQR of single-signal latency after 10 warmup calls, one worker"}}},
          {"metadata", r.metadata},
          {"rows", rows}};
}

/// Table layout: method, T1 MAE, T1 RMSE, T2 MAE, T2 RMSE, time (ms), each with its std.
inline std::string report_table_csv(const EvalReport& r) {
  std::string out = "method,t1_mae_ms,t1_mae_std,t1_rmse_ms,t1_rmse_std,t2_mae_ms,t2_mae_std,t2_rmse_ms,t2_rmse_std,"
                    "time_ms\n";
  char buf[512];
  for (const auto& row : r.rows) {
    if (!row.ok()) {
      out += row.method + ",,,,,,,,,\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", row.t1_mae.value, row.t1_mae.std,
                  row.t1_rmse.value, row.t1_rmse.std, row.t2_mae.value, row.t2_mae.std, row.t2_rmse.value,
                  row.t2_rmse.std, row.timing.median_ms);
    out += row.method + buf;
  }
  return out;
}

inline constexpr const char* kPredictionsHeader = "method,index,t1_true_ms,t2_true_ms,t1_pred_ms,t2_pred_ms";

/// Per-signal predictions of every successful method, printed round-trip exact.
inline std::string predictions_csv(const EvalReport& r) {
  std::string out = std::string(kPredictionsHeader) + "\n";
  char buf[160];
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.predictions.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g,%.17g\n", i, r.truth[i].t1_ms, r.truth[i].t2_ms,
                    row.predictions[i].t1_ms, row.predictions[i].t2_ms);
      out += row.method + buf;
    }
  }
  return out;
}

/// Rebuilds the per-method error statistics from a predictions CSV.
inline EvalReport report_from_predictions(std::istream& in, std::size_t batch_size = 500) {
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != kPredictionsHeader)
    throw std::runtime_error("predictions file: expected header '" + std::string(kPredictionsHeader) + "'");
  EvalReport report;
  report.batch_size = batch_size;
  std::vector<std::vector<TissueParams>> truths;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = "predictions line " + std::to_string(line_no);
    if (f.size() != 6) throw std::runtime_error(where + ": expected 6 fields");
    if (report.rows.empty() || report.rows.back().method != f[0]) {
      report.rows.push_back({});
      report.rows.back().method = f[0];
      truths.emplace_back();
    }
    truths.back().push_back({detail::parse_double(f[2], where), detail::parse_double(f[3], where)});
    report.rows.back().predictions.push_back({detail::parse_double(f[4], where), detail::parse_double(f[5], where)});
  }
  if (report.rows.empty()) throw std::runtime_error("predictions file has no rows");
  report.truth = truths.front();
  for (std::size_t m = 0; m < report.rows.size(); ++m) {
    if (truths[m].size() != report.truth.size())
      throw std::runtime_error("method '" + report.rows[m].method + "' has a different number of predictions");
    compute_row_stats(report.rows[m], truths[m], batch_size);
  }
  return report;
}

inline void save_report(const EvalReport& r, const std::filesystem::path& json_path) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
  };
  write(json_path, to_json(r).dump(2) + "\n");
  auto csv = json_path;
  csv.replace_extension(".csv");
  write(csv, report_table_csv(r));
  auto pred = json_path;
  pred.replace_extension(".predictions.csv");
  write(pred, predictions_csv(r));
}

}  // namespace mrfnet
