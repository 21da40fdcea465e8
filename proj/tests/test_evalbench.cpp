#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mrfnet/evalbench.hpp"
#include "mrfnet/training.hpp"

using namespace mrfnet;

namespace {

double scalar_mae(const std::vector<double>& p, const std::vector<double>& t) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - t[i]);
  return s / p.size();
}

double scalar_rmse(const std::vector<double>& p, const std::vector<double>& t) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return std::sqrt(s / p.size());
}

// Returns a fixed offset of the truth for every signal of a known dataset.
class BiasedOracle : public Method {
 public:
  BiasedOracle(std::shared_ptr<const Dataset> d, double dt1, double dt2) : oracle_(std::move(d)), dt1_(dt1), dt2_(dt2) {}
  std::string name() const override { return "biased"; }
  std::size_t input_len() const override { return oracle_.input_len(); }
  TissueParams predict_one(std::span<const float> s) const override {
    auto p = oracle_.predict_one(s);
    return {p.t1_ms + dt1_, p.t2_ms + dt2_};
  }

 private:
  IdentityOracle oracle_;
  double dt1_, dt2_;
};

class Throws : public Method {
 public:
  std::string name() const override { return "broken"; }
  std::size_t input_len() const override { return 40; }
  TissueParams predict_one(std::span<const float>) const override { throw std::runtime_error("boom"); }
};

class NotReady : public Method {
 public:
  std::string name() const override { return "unready"; }
  std::size_t input_len() const override { return 40; }
  bool ready() const override { return false; }
  TissueParams predict_one(std::span<const float>) const override { return {}; }
};

}  // namespace

TEST(Metrics, Examples) {
  const std::vector<double> p{1, 2, 3}, t{1, 4, 0};
  EXPECT_DOUBLE_EQ(mae(p, t).value, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(rmse(p, t).value, std::sqrt(13.0 / 3.0));
  // |e| = {0, 2, 3}: population std around 5/3.
  EXPECT_NEAR(mae(p, t).std, std::sqrt(((25.0 / 9) + (1.0 / 9) + (16.0 / 9)) / 3.0), 1e-15);
  EXPECT_EQ(mae(std::vector<double>{5}, std::vector<double>{5}).value, 0.0);
  EXPECT_THROW(mae(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(Metrics, AgreeWithScalarReferenceAndOrdering) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 50);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = 1000 + nd(rng);
      p[i] = t[i] + nd(rng);
    }
    const auto m = mae(p, t), r = rmse(p, t);
    EXPECT_NEAR(m.value, scalar_mae(p, t), 1e-12 * scalar_mae(p, t));
    EXPECT_NEAR(r.value, scalar_rmse(p, t), 1e-12 * scalar_rmse(p, t));
    EXPECT_GE(r.value, m.value * (1 - 1e-15));
  }
}

TEST(Evaluate, IdentityOracleHasZeroError) {
  auto data = std::make_shared<Dataset>(sample_dataset(120, default_schedule(40), SamplingMode::uniform, 0.01, 1));
  IdentityOracle oracle(data);
  EvalOptions opt;
  opt.batch_size = 50;
  opt.timing_trials = 10;
  const auto r = evaluate({&oracle}, *data, opt);
  ASSERT_TRUE(r.rows[0].ok()) << r.rows[0].error;
  EXPECT_EQ(r.rows[0].t1_mae.value, 0.0);
  EXPECT_EQ(r.rows[0].t2_rmse.value, 0.0);
  EXPECT_GT(r.rows[0].timing.median_ms, 0.0);
}

TEST(Evaluate, KnownBiasGivesExactError) {
  auto data = std::make_shared<Dataset>(sample_dataset(60, default_schedule(30), SamplingMode::uniform, 0.01, 2));
  BiasedOracle m(data, 7.0, -3.0);
  EvalOptions opt;
  opt.time_methods = false;
  const auto r = evaluate({&m}, *data, opt);
  EXPECT_NEAR(r.rows[0].t1_mae.value, 7.0, 1e-9);
  EXPECT_NEAR(r.rows[0].t1_rmse.value, 7.0, 1e-9);
  EXPECT_NEAR(r.rows[0].t2_mae.value, 3.0, 1e-9);
  EXPECT_NEAR(r.rows[0].t1_mae.std, 0.0, 1e-9);
}

TEST(Evaluate, InnerProductOnNoiselessGridSetIsExact) {
  const auto s = default_schedule(120);
  const GridSpec g{{{100, 2000, 100}}, {{10, 200, 10}}};
  auto dict = std::make_shared<Dictionary>(build_dictionary(g, s));
  const auto data = sample_dataset(200, s, SamplingMode::grid, 0.0, 4, g);
  InnerProductMethod ip(dict);
  EvalOptions opt;
  opt.batch_size = 100;
  opt.timing_trials = 10;
  const auto r = evaluate({&ip}, data, opt);
  ASSERT_TRUE(r.rows[0].ok()) << r.rows[0].error;
  EXPECT_EQ(r.rows[0].t1_mae.value, 0.0);
  EXPECT_EQ(r.rows[0].t2_mae.value, 0.0);
}

TEST(Evaluate, StatisticsArePermutationInvariant) {
  const auto s = default_schedule(60);
  const GridSpec g{{{100, 3000, 150}}, {{10, 300, 15}}};
  auto dict = std::make_shared<Dictionary>(build_dictionary(g, s));
  const auto data = sample_dataset(1000, s, SamplingMode::uniform, 0.03, 5);
  Dataset shuffled = data;
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(11));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.labels[i] = data.labels[perm[i]];
    std::copy(data.signal(perm[i]).begin(), data.signal(perm[i]).end(),
              shuffled.signals.begin() + static_cast<std::ptrdiff_t>(i * data.n_samples));
  }
  InnerProductMethod ip(dict);
  EvalOptions opt;
  opt.batch_size = 250;
  opt.time_methods = false;
  const auto a = evaluate({&ip}, data, opt).rows[0];
  const auto b = evaluate({&ip}, shuffled, opt).rows[0];
  EXPECT_NEAR(a.t1_mae.value, b.t1_mae.value, 1e-9 * a.t1_mae.value);
  EXPECT_NEAR(a.t2_rmse.value, b.t2_rmse.value, 1e-9 * a.t2_rmse.value);
  EXPECT_NEAR(a.t1_mae.std, b.t1_mae.std, 1e-9 * a.t1_mae.std + 1e-12);
  EXPECT_NEAR(a.t2_rmse.std, b.t2_rmse.std, 1e-9 * a.t2_rmse.std + 1e-12);
  EXPECT_GT(a.t1_mae.std, 0.0);
  EXPECT_GE(a.t1_rmse.value, a.t1_mae.value);
  EXPECT_GE(a.t2_rmse.value, a.t2_mae.value);
}

TEST(Evaluate, FailingMethodsBecomeErrorRows) {
  auto data = std::make_shared<Dataset>(sample_dataset(30, default_schedule(40), SamplingMode::uniform, 0.0, 6));
  IdentityOracle good(data);
  Throws bad;
  NotReady unready;
  auto short_data = std::make_shared<Dataset>(sample_dataset(5, default_schedule(20), SamplingMode::uniform, 0, 1));
  IdentityOracle wrong_len(short_data);
  EvalOptions opt;
  opt.timing_trials = 10;
  const auto r = evaluate({&bad, &good, &unready, &wrong_len}, *data, opt);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].error, "boom");
  EXPECT_TRUE(r.rows[1].ok());
  EXPECT_FALSE(r.rows[2].ok());
  EXPECT_NE(r.rows[3].error.find("expects 20"), std::string::npos);
  const auto csv = report_table_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "method,t1_mae_ms,t1_mae_std,t1_rmse_ms,t1_rmse_std,t2_mae_ms,t2_mae_std,t2_rmse_ms,t2_rmse_std,time_ms");
}

TEST(Timing, UninitialisedMethodThrows) {
  NotReady m;
  std::vector<float> sig(40, 1.0f);
  EXPECT_THROW(time_single_prediction(m, sig, 20), std::logic_error);
  auto dict = std::make_shared<Dictionary>();
  InnerProductMethod empty(dict);
  EXPECT_THROW(time_single_prediction(empty, sig, 20), std::logic_error);
}

TEST(Timing, PositiveAndBadArguments) {
  auto data = std::make_shared<Dataset>(sample_dataset(10, default_schedule(40), SamplingMode::uniform, 0, 2));
  IdentityOracle m(data);
  const auto t = time_single_prediction(m, data->signal(3), 30);
  EXPECT_GT(t.median_ms, 0.0);
  EXPECT_GE(t.iqr_ms, 0.0);
  EXPECT_EQ(t.trials, 30u);
  EXPECT_THROW(time_single_prediction(m, data->signal(3), 5), std::invalid_argument);
  std::vector<float> wrong(41, 1.0f);
  EXPECT_THROW(time_single_prediction(m, wrong, 20), std::invalid_argument);
}

TEST(Timing, InnerProductGrowsWithDictionarySize) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  auto random_dict = [&](std::size_t m) {
    auto d = std::make_shared<Dictionary>();
    d->n_atoms = m;
    d->n_samples = 500;
    d->atoms.resize(m * 500);
    for (auto& v : d->atoms) v = u(rng);
    d->labels.assign(m, {1000, 100});
    return d;
  };
  std::vector<float> q(500);
  for (auto& v : q) v = u(rng);
  InnerProductMethod small(random_dict(2000)), large(random_dict(16000));
  const double ts = time_single_prediction(small, q, 30).median_ms;
  const double tl = time_single_prediction(large, q, 30).median_ms;
  EXPECT_GT(tl, 3.0 * ts);
}

TEST(Report, PredictionsRoundTrip) {
  auto data = std::make_shared<Dataset>(sample_dataset(1100, default_schedule(30), SamplingMode::uniform, 0.01, 8));
  BiasedOracle m(data, 1.0 / 3.0, 2.5);
  const GridSpec g{{{100, 4000, 300}}, {{10, 500, 40}}};
  auto dict = std::make_shared<Dictionary>(build_dictionary(g, default_schedule(30)));
  InnerProductMethod ip(dict);
  EvalOptions opt;
  opt.time_methods = false;
  const auto r = evaluate({&m, &ip}, *data, opt);
  std::istringstream in(predictions_csv(r));
  const auto back = report_from_predictions(in, r.batch_size);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto &x = r.rows[k], &y = back.rows[k];
    EXPECT_EQ(x.method, y.method);
    EXPECT_NEAR(x.t1_mae.value, y.t1_mae.value, 1e-9);
    EXPECT_NEAR(x.t1_mae.std, y.t1_mae.std, 1e-9);
    EXPECT_NEAR(x.t1_rmse.value, y.t1_rmse.value, 1e-9);
    EXPECT_NEAR(x.t2_mae.value, y.t2_mae.value, 1e-9);
    EXPECT_NEAR(x.t2_rmse.std, y.t2_rmse.std, 1e-9);
  }
  std::istringstream bad("method,index\n");
  EXPECT_THROW(report_from_predictions(bad), std::runtime_error);
}

TEST(Report, JsonShape) {
  auto data = std::make_shared<Dataset>(sample_dataset(20, default_schedule(30), SamplingMode::uniform, 0, 8));
  IdentityOracle m(data);
  EvalOptions opt;
  opt.time_methods = false;
  const auto j = to_json(evaluate({&m}, *data, opt));
  EXPECT_EQ(j.at("format"), "mrfnet-eval");
  EXPECT_EQ(j.at("rows").size(), 1u);
  EXPECT_EQ(j.at("metadata").at("n_signals"), 20);
  EXPECT_EQ(j.at("metadata").at("dataset_digest").get<std::string>().size(), 64u);
}

TEST(NetworkMethodTest, MatchesModelPrediction) {
  nn::Model model(nn::ModelSpec::recurrent(nn::CellKind::gru, 40, 8, 4));
  model.initialize(3);
  const auto ckpt = nn::ModelCheckpoint::from_model(model, LabelScaler{}, 3);
  NetworkMethod m(ckpt);
  EXPECT_EQ(m.name(), "gru");
  const auto data = sample_dataset(300, default_schedule(40), SamplingMode::uniform, 0.01, 9);
  const auto all = m.predict_all(data);
  const auto reloaded = ckpt.to_model();
  for (std::size_t i : {std::size_t{0}, std::size_t{129}, std::size_t{299}}) {
    const auto y = reloaded.predict(data.signal(i));
    EXPECT_NEAR(all[i].t1_ms, y[0] * 4000.0, 1e-9);
    EXPECT_NEAR(all[i].t2_ms, y[1] * 500.0, 1e-9);
    const auto one = m.predict_one(data.signal(i));
    EXPECT_NEAR(one.t1_ms, all[i].t1_ms, 1e-9);
  }
}
