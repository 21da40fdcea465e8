#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/dataset.hpp"
#include "mrfnet/dictionary.hpp"
#include "mrfnet/digest.hpp"
#include "mrfnet/evalbench.hpp"
#include "mrfnet/random.hpp"
#include "mrfnet/schedule.hpp"
#include "mrfnet/training.hpp"

namespace mrfnet {

/// Everything needed to re-run dictionary build, dataset generation, training and evaluation.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t excitations = 400;
  std::string schedule_path;  // optional schedule CSV; overrides excitations
  GridSpec grid = desk_grid();
  std::size_t train_signals = 2000;
  std::size_t test_signals = 500;
  SamplingMode train_mode = SamplingMode::uniform;
  SamplingMode test_mode = SamplingMode::uniform;
  double train_noise = 0.01;
  double test_noise = 0.01;
  std::vector<std::string> models{"gru"};
  int hidden_dim = 100;
  int chunk_size = 25;
  TrainConfig train;
  std::size_t timing_trials = 20;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"excitations", c.excitations},
          {"schedule_path", c.schedule_path},
          {"grid", to_json(c.grid)},
          {"train_signals", c.train_signals},
          {"test_signals", c.test_signals},
          {"train_mode", to_string(c.train_mode)},
          {"test_mode", to_string(c.test_mode)},
          {"train_noise", c.train_noise},
          {"test_noise", c.test_noise},
          {"models", c.models},
          {"hidden_dim", c.hidden_dim},
          {"chunk_size", c.chunk_size},
          {"train", to_json(c.train)},
          {"timing_trials", c.timing_trials}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.excitations = j.value("excitations", c.excitations);
  c.schedule_path = j.value("schedule_path", c.schedule_path);
  if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
  c.train_signals = j.value("train_signals", c.train_signals);
  c.test_signals = j.value("test_signals", c.test_signals);
  c.train_mode = sampling_mode_from_string(j.value("train_mode", to_string(c.train_mode)));
  c.test_mode = sampling_mode_from_string(j.value("test_mode", to_string(c.test_mode)));
  c.train_noise = j.value("train_noise", c.train_noise);
  c.test_noise = j.value("test_noise", c.test_noise);
  c.models = j.value("models", c.models);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  c.timing_trials = j.value("timing_trials", c.timing_trials);
  if (c.models.empty()) throw std::invalid_argument("pipeline needs at least one model");
  return c;
}

struct Artifact {
  std::string name;  // file name relative to the run directory
  std::string sha256;
  bool deterministic = true;
};

using PipelineLog = std::function<void(const std::string&)>;

namespace pipeline_detail {
inline SequenceSchedule resolve_schedule(const PipelineConfig& c) {
  if (c.schedule_path.empty()) return default_schedule(c.excitations);
  if (!std::filesystem::exists(c.schedule_path)) throw std::runtime_error("missing file: " + c.schedule_path);
  return load_schedule(c.schedule_path);
}

inline nn::ModelSpec model_spec(const PipelineConfig& c, const std::string& name, int input_len) {
  auto spec = nn::model_spec_for(name, input_len);
  if (spec.kind == nn::ModelKind::rnn_regressor) {
    spec.hidden_dim = c.hidden_dim;
    spec.chunk_size = c.chunk_size;
  }
  spec.validate();
  return spec;
}
}  // namespace pipeline_detail

/// Runs every stage into dir and returns the artifact list (also written as dir/manifest.json).
inline std::vector<Artifact> run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& dir,
                                          const PipelineLog& log = {}) {
  namespace fs = std::filesystem;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  fs::create_directories(dir);
  std::vector<Artifact> artifacts;
  auto record = [&](const std::string& name, bool deterministic = true) {
    artifacts.push_back({name, sha256_file((dir / name).string()), deterministic});
  };

  const auto schedule = pipeline_detail::resolve_schedule(cfg);
  save_schedule(schedule, dir / "schedule.csv");
  record("schedule.csv");
  record("schedule.json");
  say("schedule: " + std::to_string(schedule.size()) + " excitations, digest " + schedule_digest(schedule));

  auto dict = std::make_shared<Dictionary>(build_dictionary(cfg.grid, schedule));
  save_dictionary(*dict, dir / "dictionary");
  record("dictionary.dict");
  record("dictionary.json");
  say("dictionary: " + std::to_string(dict->n_atoms) + " atoms");

  const auto train_set = sample_dataset(cfg.train_signals, schedule, cfg.train_mode, cfg.train_noise,
                                        derive_seed(cfg.seed, "dataset.train"), cfg.grid);
  save_dataset(train_set, dir / "train.ds");
  record("train.ds");
  record("train.ds.json");
  auto test_set = std::make_shared<Dataset>(sample_dataset(cfg.test_signals, schedule, cfg.test_mode, cfg.test_noise,
                                                           derive_seed(cfg.seed, "dataset.test"), cfg.grid));
  save_dataset(*test_set, dir / "test.ds");
  record("test.ds");
  record("test.ds.json");
  say("datasets: " + std::to_string(train_set.size()) + " train, " + std::to_string(test_set->size()) + " test");

  std::vector<std::unique_ptr<Method>> methods;
  methods.push_back(std::make_unique<InnerProductMethod>(dict));
  for (const auto& name : cfg.models) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train." + name);
    const auto spec = pipeline_detail::model_spec(cfg, name, static_cast<int>(schedule.size()));
    auto result = train(spec, tc, train_set);
    save_checkpoint(result.checkpoint, dir / (name + ".ckpt"));
    record(name + ".ckpt");
    say("trained " + name + ": " + std::to_string(result.history.size()) + " epochs, best validation loss " +
        std::to_string(result.best_val_loss));
    methods.push_back(std::make_unique<NetworkMethod>(result.checkpoint));
  }

  EvalOptions eo;
  eo.timing_trials = cfg.timing_trials;
  eo.metadata = {{"seed", cfg.seed}, {"threads", max_threads()}};
  std::vector<const Method*> ptrs;
  for (const auto& m : methods) ptrs.push_back(m.get());
  const auto report = evaluate(ptrs, *test_set, eo);
  save_report(report, dir / "report.json");
  record("report.predictions.csv");
  record("report.json", false);
  record("report.csv", false);
  say("evaluation written to " + (dir / "report.json").string());

  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : artifacts) arts.push_back({{"name", a.name}, {"sha256", a.sha256}, {"deterministic", a.deterministic}});
  const nlohmann::json manifest{{"format", "mrfnet-run"}, {"version", 1}, {"config", to_json(cfg)}, {"artifacts", arts}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  return artifacts;
}

struct ReproduceResult {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Checks the recorded artifacts next to the manifest, re-runs the pipeline into
/// scratch and compares digests of every deterministic artifact.
inline ReproduceResult reproduce(const std::filesystem::path& manifest_path, const std::filesystem::path& scratch,
                                 const PipelineLog& log = {}) {
  namespace fs = std::filesystem;
  ReproduceResult r;
  if (!fs::exists(manifest_path)) {
    r.problems.push_back("missing file: " + manifest_path.string());
    return r;
  }
  std::ifstream in(manifest_path);
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "mrfnet-run")
    throw std::runtime_error(manifest_path.string() + ": not a run manifest");
  const auto cfg = pipeline_config_from_json(manifest.at("config"));
  if (!cfg.schedule_path.empty() && !fs::exists(cfg.schedule_path)) {
    r.problems.push_back("missing file: " + cfg.schedule_path);
    return r;
  }

  const fs::path run_dir = manifest_path.parent_path();
  std::vector<Artifact> recorded;
  for (const auto& a : manifest.at("artifacts"))
    recorded.push_back({a.at("name").get<std::string>(), a.at("sha256").get<std::string>(), a.value("deterministic", true)});
  for (const auto& a : recorded) {
    const auto path = run_dir / a.name;
    if (!fs::exists(path)) {
      r.problems.push_back("missing file: " + path.string());
      continue;
    }
    const auto found = sha256_file(path.string());
    if (found != a.sha256) r.problems.push_back("digest mismatch: " + path.string() + " (recorded " + a.sha256 + ", found " + found + ")");
  }

  const auto fresh = run_pipeline(cfg, scratch, log);
  for (const auto& a : recorded) {
    if (!a.deterministic) continue;
    const auto it = std::find_if(fresh.begin(), fresh.end(), [&](const Artifact& f) { return f.name == a.name; });
    if (it == fresh.end()) {
      r.problems.push_back("re-run did not produce " + a.name);
    } else if (it->sha256 != a.sha256) {
      r.problems.push_back("digest mismatch on re-run: " + a.name + " (recorded " + a.sha256 + ", re-run " + it->sha256 + ")");
    }
  }
  return r;
}

}  // namespace mrfnet
