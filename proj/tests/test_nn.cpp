#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mrfnet/nn/adam.hpp"
#include "mrfnet/nn/cells.hpp"
#include "mrfnet/nn/loss.hpp"
#include "mrfnet/nn/model.hpp"
#include "support.hpp"

using namespace mrfnet;
using namespace mrfnet::nn;
using mrfnet::check::random_vector;
using mrfnet::check::randomize;

namespace {
double max_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double g = 0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, std::abs(a[i] - b[i]));
  return g;
}
}  // namespace

TEST(SimpleCell, ZeroParametersGiveZeroState) {
  RnnCellParams p(CellKind::simple, 3, 4);
  const auto h = simple_rnn_step(p, std::vector<double>{1, 2, 3}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  for (double v : h) EXPECT_EQ(v, 0.0);
}

TEST(SimpleCell, IdentityRecurrence) {
  RnnCellParams p(CellKind::simple, 2, 3);
  p.U.setIdentity();
  const std::vector<double> h{0.01, -0.02, 0.03};
  const auto out = simple_rnn_step(p, std::vector<double>{0, 0}, h);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out[j], std::tanh(h[j]));
}

TEST(SimpleCell, MatchesScalarLoop) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    RnnCellParams p(CellKind::simple, 4, 6);
    randomize(p, rng);
    const auto x = random_vector(4, rng), h = random_vector(6, rng);
    EXPECT_LT(max_gap(simple_rnn_step(p, x, h), check::scalar_simple(p, x, h)), 1e-12);
  }
}

TEST(LstmCell, ClosedGatesForgetEverything) {
  std::mt19937_64 rng(2);
  RnnCellParams p(CellKind::lstm, 3, 4);
  randomize(p, rng, 0.1);
  p.b.segment(0, 4).setConstant(-40);
  p.b.segment(4, 4).setConstant(-40);
  const auto [h, c] = lstm_step(p, random_vector(3, rng), random_vector(4, rng), std::vector<double>{5, -5, 3, 1});
  for (double v : c) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LstmCell, OpenForgetGateKeepsMemory) {
  std::mt19937_64 rng(3);
  RnnCellParams p(CellKind::lstm, 3, 4);
  randomize(p, rng, 0.1);
  p.b.segment(0, 4).setConstant(-40);
  p.b.segment(4, 4).setConstant(40);
  p.b.segment(8, 4).setConstant(40);
  const std::vector<double> c_prev{0.5, -0.3, 0.9, -1.2};
  const auto [h, c] = lstm_step(p, random_vector(3, rng), random_vector(4, rng), c_prev);
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(c[j], c_prev[j], 1e-12);
    EXPECT_NEAR(h[j], std::tanh(c_prev[j]), 1e-12);
  }
}

TEST(LstmCell, MatchesScalarLoop) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    RnnCellParams p(CellKind::lstm, 3, 5);
    randomize(p, rng);
    const auto x = random_vector(3, rng), h = random_vector(5, rng), c = random_vector(5, rng);
    const auto [hn, cn] = lstm_step(p, x, h, c);
    const auto [hr, cr] = check::scalar_lstm(p, x, h, c);
    EXPECT_LT(max_gap(hn, hr), 1e-12);
    EXPECT_LT(max_gap(cn, cr), 1e-12);
  }
}

TEST(GruCell, SaturatedGatesReduceToSimpleCell) {
  for (unsigned s = 0; s < 20; ++s) EXPECT_LT(check::gru_reduction_gap(3, 8, s), 1e-6);
}

TEST(GruCell, UpdateGateOneFreezesState) {
  std::mt19937_64 rng(5);
  RnnCellParams p(CellKind::gru, 2, 4);
  randomize(p, rng);
  p.b.segment(4, 4).setConstant(30);
  const auto h = random_vector(4, rng);
  EXPECT_LE(max_gap(gru_step(p, random_vector(2, rng), h), h), 1e-6);
}

TEST(GruCell, MatchesScalarLoop) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 10; ++t) {
    RnnCellParams p(CellKind::gru, 4, 5);
    randomize(p, rng);
    const auto x = random_vector(4, rng), h = random_vector(5, rng);
    EXPECT_LT(max_gap(gru_step(p, x, h), check::scalar_gru(p, x, h)), 1e-12);
  }
}

TEST(Cells, ShapeMismatchAndWrongKind) {
  RnnCellParams p(CellKind::gru, 2, 3);
  EXPECT_THROW(gru_step(p, std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(gru_step(p, std::vector<double>{1, 2}, std::vector<double>{0, 0}), std::invalid_argument);
  EXPECT_THROW(simple_rnn_step(p, std::vector<double>{1, 2}, std::vector<double>{0, 0, 0}), std::invalid_argument);
}

TEST(ParamCount, ClosedForms) {
  EXPECT_EQ(param_count(ModelSpec::recurrent(CellKind::gru)), 30802u);
  EXPECT_EQ(param_count(ModelSpec::recurrent(CellKind::lstm)), 41002u);
  EXPECT_EQ(param_count(ModelSpec::recurrent(CellKind::simple)), 10402u);
  EXPECT_EQ(param_count(ModelSpec::dense()), 1750u * 300 + 300 + 300 * 300 + 300 + 300 * 2 + 2);
  EXPECT_EQ(cell_param_count(CellKind::gru, 1, 100), 3u * (100 * 101 + 100));
}

TEST(ParamCount, GruAlwaysSmallerThanLstm) {
  for (int in : {1, 5, 25})
    for (int h : {1, 7, 64, 100}) {
      const int len = in * 4;
      EXPECT_LT(param_count(ModelSpec::recurrent(CellKind::gru, len, h, in)),
                param_count(ModelSpec::recurrent(CellKind::lstm, len, h, in)));
    }
}

TEST(ParamCount, CnnLayout) {
  // conv k*Cin*Cout + Cout per layer, then 128 -> 2 head.
  const std::size_t want = (5 * 1 * 16 + 16) + (5 * 16 * 32 + 32) + (5 * 32 * 64 + 64) + (5 * 64 * 128 + 128) + 128 * 2 + 2;
  EXPECT_EQ(param_count(ModelSpec::conv()), want);
  EXPECT_EQ(conv_output_length(1750, 5, 2), 875);
}

TEST(ForwardSequence, ZeroModelReturnsHeadBias) {
  for (const auto& spec : {ModelSpec::recurrent(CellKind::gru, 20, 4), ModelSpec::dense(20, {6}),
                           ModelSpec::conv(20, {3, 4}, 3, 2)}) {
    Model m(spec);
    auto params = std::vector<double>(m.size(), 0.0);
    params[params.size() - 2] = 0.25;
    params[params.size() - 1] = -0.5;
    const auto y = forward_sequence(spec, params, std::vector<double>(20, 0.0));
    EXPECT_EQ(y[0], 0.25);
    EXPECT_EQ(y[1], -0.5);
  }
}

TEST(ForwardSequence, FrozenGruIgnoresSignal) {
  const auto spec = ModelSpec::recurrent(CellKind::gru, 12, 4);
  Model m(spec);
  m.initialize(9);
  m.block(2).middleCols(4, 4).setConstant(40.0);
  const auto y = m.predict(std::span<const double>(std::vector<double>(12, 0.7)));
  const auto bias = m.block(4);
  EXPECT_NEAR(y[0], bias(0, 0), 1e-12);
  EXPECT_NEAR(y[1], bias(0, 1), 1e-12);
}

TEST(ForwardSequence, EqualsManualStepComposition) {
  std::mt19937_64 rng(10);
  for (CellKind kind : {CellKind::gru, CellKind::lstm, CellKind::simple}) {
    const auto spec = ModelSpec::recurrent(kind, 7, 4);
    Model m(spec);
    m.initialize(11);
    const auto signal = random_vector(7, rng);
    RnnCellParams cell(kind, 1, 4);
    cell.W = m.block(0);
    cell.U = m.block(1);
    cell.b = m.block(2);
    std::vector<double> h(4, 0.0), c(4, 0.0);
    for (double s : signal) {
      const std::vector<double> x{s};
      if (kind == CellKind::gru) h = gru_step(cell, x, h);
      if (kind == CellKind::simple) h = simple_rnn_step(cell, x, h);
      if (kind == CellKind::lstm) std::tie(h, c) = lstm_step(cell, x, h, c);
    }
    const auto head = m.block(3);
    const auto hb = m.block(4);
    const auto y = forward_sequence(spec, m.params(), signal);
    for (int o = 0; o < 2; ++o) {
      double want = hb(0, o);
      for (int j = 0; j < 4; ++j) want += h[j] * head(j, o);
      EXPECT_NEAR(y[o], want, 1e-12);
    }
  }
}

TEST(ForwardSequence, LengthMismatch) {
  const auto spec = ModelSpec::recurrent(CellKind::gru, 10, 3);
  const Model m(spec);
  EXPECT_THROW(forward_sequence(spec, m.params(), std::vector<double>(9, 0.0)), std::invalid_argument);
}

TEST(Loss, Examples) {
  Tensor2 a(1, 2), b(1, 2);
  a << 1, 1;
  b << 0, 0;
  EXPECT_EQ(mse_loss(a, a), 0.0);
  EXPECT_EQ(mse_loss(a, b), 1.0);
  std::mt19937_64 rng(12);
  Tensor2 p(3, 2), t(3, 2);
  const auto r = random_vector(12, rng);
  double want = 0;
  for (int i = 0; i < 6; ++i) {
    p.data()[i] = r[i];
    t.data()[i] = r[i + 6];
    want += (r[i] - r[i + 6]) * (r[i] - r[i + 6]);
  }
  EXPECT_NEAR(mse_loss(p, t), want / 6, 1e-15);
  EXPECT_THROW(mse_loss(p, a), std::invalid_argument);
}

TEST(Backward, ZeroAtPerfectFit) {
  const auto spec = ModelSpec::recurrent(CellKind::lstm, 5, 3);
  Model m(spec);
  m.initialize(1);
  Tensor2 x = Tensor2::Random(1, 5);
  Tape tape;
  const Tensor2 y = m.forward(x, &tape);
  std::vector<double> g(m.size(), 1.0);
  m.backward(tape, mse_gradient(y, y), g);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RequiresRecordedForward) {
  const Model m(ModelSpec::recurrent(CellKind::gru, 5, 3));
  std::vector<double> g(m.size());
  Tape empty;
  EXPECT_THROW(m.backward(empty, Tensor2::Zero(1, 2), g), std::logic_error);
}

TEST(Backward, FiniteDifferenceAgreement) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    EXPECT_LT(check::gradient_check(ModelSpec::recurrent(CellKind::gru, 5, 3), 2, seed), 1e-6);
    EXPECT_LT(check::gradient_check(ModelSpec::recurrent(CellKind::lstm, 5, 3), 2, seed), 1e-6);
    EXPECT_LT(check::gradient_check(ModelSpec::recurrent(CellKind::simple, 6, 3, 2), 2, seed), 1e-6);
    EXPECT_LT(check::gradient_check(ModelSpec::dense(7, {5, 4}), 3, seed), 1e-6);
    EXPECT_LT(check::gradient_check(ModelSpec::conv(16, {3, 4}, 5, 2), 2, seed), 1e-6);
  }
}

TEST(Backward, ActivationsStayFinite) {
  for (const auto& spec : {ModelSpec::recurrent(CellKind::gru, 200, 16, 10), ModelSpec::recurrent(CellKind::lstm, 200, 16, 10),
                           ModelSpec::dense(200), ModelSpec::conv(200)}) {
    Model m(spec);
    m.initialize(3);
    Tensor2 x = 50.0 * Tensor2::Random(4, 200);
    Tape tape;
    const Tensor2 y = m.forward(x, &tape);
    std::vector<double> g(m.size());
    m.backward(tape, mse_gradient(y, Tensor2::Zero(4, 2)), g);
    EXPECT_TRUE(y.allFinite());
    for (double v : g) ASSERT_TRUE(std::isfinite(v));
    for (const auto& st : tape.steps) {
      EXPECT_LE(st.h.cwiseAbs().maxCoeff(), 1.0);
      EXPECT_GE(st.gates.minCoeff(), -1.0);
      EXPECT_LE(st.gates.maxCoeff(), 1.0);
    }
  }
}

TEST(Initialisation, RecurrentBlocksAreOrthogonal) {
  Model m(ModelSpec::recurrent(CellKind::lstm, 10, 8));
  m.initialize(4);
  const auto U = m.block(1);
  for (int g = 0; g < 4; ++g) {
    const Tensor2 q = U.middleCols(g * 8, 8);
    EXPECT_LT((q.transpose() * q - Tensor2::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(m.block(2)(0, 8), 1.0);
  EXPECT_EQ(m.block(2)(0, 0), 0.0);
}

TEST(Initialisation, SeededAndDeterministic) {
  Model a(ModelSpec::conv(64)), b(ModelSpec::conv(64)), c(ModelSpec::conv(64));
  a.initialize(5);
  b.initialize(5);
  c.initialize(6);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s(3, 0.01);
  std::vector<double> p{1.0, 2.0, 3.0};
  const std::vector<double> g{0.5, -2.0, 1e-3};
  adam_update(s, p, g);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[1], 2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p[2], 3.0 - 0.01, 1e-7);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s(2, 0.1);
  std::vector<double> p{0.3, -0.7};
  for (int i = 0; i < 10; ++i) adam_update(s, p, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(p[0], 0.3);
  EXPECT_EQ(p[1], -0.7);
}

TEST(Adam, ConvergesOnQuadratic) {
  AdamState s(1, 0.1);
  std::vector<double> theta{1.0};
  double prev = 1.0;
  for (int step = 1; step <= 100; ++step) {
    adam_update(s, theta, std::vector<double>{2.0 * theta[0]});
    if (step > 5 && step <= 10) {
      EXPECT_LT(std::abs(theta[0]), prev);
    }
    prev = std::abs(theta[0]);
  }
  EXPECT_LT(std::abs(theta[0]), 0.1);
}

TEST(Adam, SizeMismatch) {
  AdamState s(2);
  std::vector<double> p(3);
  EXPECT_THROW(adam_update(s, p, std::vector<double>(3)), std::invalid_argument);
}

TEST(ModelSpecJson, RoundTrip) {
  for (const auto& spec : {ModelSpec::recurrent(CellKind::lstm, 400, 50, 25), ModelSpec::dense(), ModelSpec::conv(300)}) {
    const auto back = model_spec_from_json(to_json(spec));
    EXPECT_EQ(to_json(back), to_json(spec));
    EXPECT_EQ(param_count(back), param_count(spec));
  }
  EXPECT_THROW(ModelSpec::recurrent(CellKind::gru, 100, 10, 7).validate(), std::invalid_argument);
}
