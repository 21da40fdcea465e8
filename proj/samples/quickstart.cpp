// Small end-to-end run: dictionary, noisy test signals, a briefly trained GRU, and a report.
#include <cstdio>
#include <memory>

#include "mrfnet/mrfnet.hpp"

using namespace mrfnet;

int main() {
  const auto schedule = default_schedule(200);

  GridSpec grid{{{0, 1000, 50}, {1000, 4000, 200}}, {{0, 100, 10}, {100, 500, 40}}};
  auto dict = std::make_shared<Dictionary>(build_dictionary(grid, schedule));
  std::printf("dictionary: %zu atoms x %zu samples\n", dict->n_atoms, dict->n_samples);

  const auto fp = simulate_fingerprint({850.0, 60.0}, schedule);
  const auto m = match(*dict, fp.magnitude());
  std::printf("T1=850 T2=60 matched to T1=%g T2=%g (score %.6f)\n", m.params.t1_ms, m.params.t2_ms, m.score);

  const auto train_set = sample_dataset(1000, schedule, SamplingMode::uniform, 0.01, 1);
  const auto test_set = sample_dataset(200, schedule, SamplingMode::uniform, 0.01, 2);

  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.max_epochs = 15;
  cfg.seed = 3;
  const auto spec = nn::ModelSpec::recurrent(nn::CellKind::gru, 200, 32, 20);
  const auto result = train(spec, cfg, train_set);
  std::printf("gru: %zu parameters, best validation loss %.5f at epoch %zu\n", nn::param_count(spec),
              result.best_val_loss, result.best_epoch);

  InnerProductMethod ip(dict);
  NetworkMethod gru(result.checkpoint);
  EvalOptions opts;
  opts.timing_trials = 20;
  const auto report = evaluate({&ip, &gru}, test_set, opts);
  std::fputs(report_table_csv(report).c_str(), stdout);
}
