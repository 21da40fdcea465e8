#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrfnet/mrfnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mrfnet;

namespace {

struct Globals {
  unsigned threads = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool verbose = false;
};

struct Context {
  Globals g;
  std::string command;
  json config = json::object();
  json inputs = json::object();

  void input(const fs::path& p) {
    if (!fs::exists(p)) throw std::runtime_error("missing file: " + p.string());
    inputs[p.string()] = sha256_file(p.string());
  }
  void log_config() const {
    json line{{"event", "config"},
              {"command", command},
              {"threads", max_threads()},
              {"seed", g.seed},
              {"config", config},
              {"inputs", inputs}};
    std::cerr << line.dump() << '\n';
  }
  void progress(const std::string& msg) const {
    if (g.verbose) std::cerr << json{{"event", "progress"}, {"message", msg}}.dump() << '\n';
  }
};

SequenceSchedule resolve_schedule(Context& ctx, const std::string& path, std::size_t excitations) {
  if (path.empty()) {
    ctx.config["schedule"] = {{"default", true}, {"excitations", excitations}};
    return default_schedule(excitations);
  }
  ctx.input(path);
  auto s = load_schedule(path);
  ctx.config["schedule"] = {{"path", path}, {"excitations", s.size()}};
  return s;
}

GridSpec resolve_grid(Context& ctx, const std::string& grid) {
  GridSpec g;
  if (grid.empty() || grid == "reference") {
    g = reference_grid();
  } else if (grid == "desk") {
    g = desk_grid();
  } else if (grid.front() == '{') {
    g = grid_from_json(json::parse(grid));
  } else {
    ctx.input(grid);
    std::ifstream in(grid);
    g = grid_from_json(json::parse(in));
  }
  ctx.config["grid"] = to_json(g);
  return g;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

// One signal per line; a non-numeric first line is treated as a header.
std::vector<std::vector<double>> read_signals_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open signals file: " + p.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    try {
      for (const auto& f : fields) row.push_back(detail::parse_double(f, p.string() + " line " + std::to_string(line_no)));
    } catch (const std::invalid_argument&) {
      if (line_no == 1 && rows.empty()) continue;
      throw;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(p.string() + ": no signals");
  return rows;
}

int cmd_simulate(Context& ctx, double t1, double t2, const std::string& schedule_path, std::size_t n,
                 const std::string& out) {
  const TissueParams p{t1, t2};
  validate_tissue(p);
  const auto schedule = resolve_schedule(ctx, schedule_path, n);
  ctx.config["t1_ms"] = t1;
  ctx.config["t2_ms"] = t2;
  ctx.config["out"] = out;
  ctx.log_config();
  const auto fp = simulate_fingerprint(p, schedule);
  std::string text = "index,real,imag,magnitude\n";
  char buf[128];
  for (std::size_t i = 0; i < fp.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, fp.samples[i].real(), fp.samples[i].imag(),
                  std::abs(fp.samples[i]));
    text += buf;
  }
  write_text(out, text);
  return 0;
}

int cmd_dict_build(Context& ctx, const std::string& grid, const std::string& schedule_path, std::size_t n,
                   const std::string& out) {
  const auto g = resolve_grid(ctx, grid);
  const auto schedule = resolve_schedule(ctx, schedule_path, n);
  ctx.config["out"] = out;
  ctx.log_config();
  const auto dict = build_dictionary(g, schedule);
  save_dictionary(dict, out);
  ctx.progress("wrote " + std::to_string(dict.n_atoms) + " atoms x " + std::to_string(dict.n_samples) + " samples");
  return 0;
}

int cmd_match(Context& ctx, const std::string& dict_path, const std::string& signals, const std::string& out) {
  auto stem = dictionary_stem(dict_path);
  ctx.input(fs::path(stem).concat(".dict"));
  ctx.input(signals);
  ctx.config["dict"] = stem.string();
  ctx.config["signals"] = signals;
  ctx.config["out"] = out;
  ctx.log_config();
  const auto dict = load_dictionary(stem);

  std::vector<double> block;
  std::size_t n_queries = 0;
  if (fs::path(signals).extension() == ".ds") {
    const auto ds = load_dataset(signals);
    block.assign(ds.signals.begin(), ds.signals.end());
    n_queries = ds.size();
    if (ds.n_samples != dict.n_samples)
      throw std::invalid_argument("signals have " + std::to_string(ds.n_samples) + " samples but dictionary has " +
                                  std::to_string(dict.n_samples));
  } else {
    const auto rows = read_signals_csv(signals);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != dict.n_samples)
        throw std::invalid_argument("signal " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                                    " samples but dictionary has " + std::to_string(dict.n_samples));
      block.insert(block.end(), rows[i].begin(), rows[i].end());
    }
    n_queries = rows.size();
  }
  const auto results = match_batch(dict, std::span<const double>(block), n_queries);
  std::string text = "index,t1_ms,t2_ms,score\n";
  char buf[128];
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].result) throw std::invalid_argument("signal " + std::to_string(i) + ": " + results[i].error);
    const auto& r = *results[i].result;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, r.params.t1_ms, r.params.t2_ms, r.score);
    text += buf;
  }
  write_text(out, text);
  return 0;
}

int cmd_dataset(Context& ctx, std::size_t n, const std::string& mode, double noise, const std::string& grid,
                const std::string& schedule_path, std::size_t excitations, const std::string& out) {
  const auto m = sampling_mode_from_string(mode);
  const auto g = resolve_grid(ctx, grid);
  const auto schedule = resolve_schedule(ctx, schedule_path, excitations);
  const auto seed = derive_seed(ctx.g.seed, "dataset");
  ctx.config.update({{"n", n}, {"mode", mode}, {"noise_sigma", noise}, {"dataset_seed", seed}, {"out", out}});
  ctx.log_config();
  const auto ds = sample_dataset(n, schedule, m, noise, seed, g);
  save_dataset(ds, out);
  return 0;
}

struct TrainFlags {
  std::string model, data, config, out;
  std::optional<std::size_t> batch_size, patience, max_epochs;
  std::optional<double> lr, final_lr, min_rel, val_fraction;
  std::optional<int> hidden, chunk;
};

int cmd_train(Context& ctx, const TrainFlags& f) {
  ctx.input(f.data);
  TrainConfig cfg;
  if (!f.config.empty()) {
    ctx.input(f.config);
    std::ifstream in(f.config);
    cfg = train_config_from_json(json::parse(in));
  }
  cfg.seed = derive_seed(ctx.g.seed, "train");
  if (f.batch_size) cfg.batch_size = *f.batch_size;
  if (f.patience) cfg.patience_epochs = *f.patience;
  if (f.max_epochs) cfg.max_epochs = *f.max_epochs;
  if (f.lr) cfg.learning_rate = *f.lr;
  if (f.final_lr) cfg.final_learning_rate = *f.final_lr;
  if (f.min_rel) cfg.min_rel_improvement = *f.min_rel;
  if (f.val_fraction) cfg.validation_fraction = *f.val_fraction;
  cfg.validate();

  const auto data = load_dataset(f.data);
  auto spec = nn::model_spec_for(f.model, static_cast<int>(data.n_samples));
  if (f.hidden) spec.hidden_dim = *f.hidden;
  if (f.chunk) spec.chunk_size = *f.chunk;
  spec.validate();
  ctx.config.update({{"model", to_json(spec)}, {"train", to_json(cfg)}, {"data", f.data}, {"out", f.out}});
  ctx.log_config();

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    if (ctx.g.verbose)
      std::cerr << json{{"event", "epoch"}, {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}}.dump()
                << '\n';
  };
  const auto result = train(spec, cfg, data, LabelScaler{}, hooks);
  save_checkpoint(result.checkpoint, f.out);
  std::cerr << json{{"event", "trained"},
                    {"epochs", result.history.size()},
                    {"best_epoch", result.best_epoch},
                    {"best_val_loss", result.best_val_loss},
                    {"stop_reason", result.stop_reason}}
                   .dump()
            << '\n';
  return 0;
}

std::vector<std::unique_ptr<Method>> load_methods(Context& ctx, const std::string& dict_path,
                                                  const std::vector<std::string>& ckpts) {
  std::vector<std::unique_ptr<Method>> methods;
  if (!dict_path.empty()) {
    const auto stem = dictionary_stem(dict_path);
    ctx.input(fs::path(stem).concat(".dict"));
    methods.push_back(std::make_unique<InnerProductMethod>(std::make_shared<Dictionary>(load_dictionary(stem))));
  }
  std::map<std::string, int> seen;
  for (const auto& c : ckpts) {
    ctx.input(c);
    const auto ckpt = nn::load_checkpoint(c);
    std::string name = ckpt.spec.name();
    if (seen[name]++ > 0) name += "_" + std::to_string(seen[name]);
    methods.push_back(std::make_unique<NetworkMethod>(ckpt, name));
  }
  if (methods.empty()) throw std::invalid_argument("nothing to evaluate: give --dict and/or --ckpt");
  return methods;
}

int cmd_eval(Context& ctx, const std::string& dict_path, const std::vector<std::string>& ckpts, const std::string& data_path,
             const std::string& out, std::size_t trials, bool no_timing, std::size_t batch) {
  ctx.input(data_path);
  ctx.config.update({{"dict", dict_path}, {"ckpt", ckpts}, {"data", data_path}, {"out", out}, {"trials", trials},
                     {"timing", !no_timing}, {"batch_size", batch}});
  const auto methods = load_methods(ctx, dict_path, ckpts);
  const auto data = load_dataset(data_path);
  for (const auto& m : methods)
    if (m->input_len() != data.n_samples)
      throw std::invalid_argument("length mismatch: " + m->name() + " expects N=" + std::to_string(m->input_len()) +
                                  " but dataset " + data_path + " has N=" + std::to_string(data.n_samples));
  ctx.log_config();
  EvalOptions eo;
  eo.batch_size = batch;
  eo.timing_trials = trials;
  eo.time_methods = !no_timing;
  eo.metadata = {{"seed", ctx.g.seed}, {"threads", max_threads()}, {"inputs", ctx.inputs}};
  std::vector<const Method*> ptrs;
  for (const auto& m : methods) ptrs.push_back(m.get());
  const auto report = evaluate(ptrs, data, eo);
  save_report(report, out);
  std::cout << report_table_csv(report);
  for (const auto& r : report.rows)
    if (!r.ok()) return 1;
  return 0;
}

int cmd_bench(Context& ctx, const std::string& dict_path, const std::vector<std::string>& ckpts, std::size_t trials) {
  set_max_threads(1);
  ctx.config.update({{"dict", dict_path}, {"ckpt", ckpts}, {"trials", trials}});
  const auto methods = load_methods(ctx, dict_path, ckpts);
  ctx.log_config();
  json rows = json::array();
  for (const auto& m : methods) {
    Rng rng(derive_seed(ctx.g.seed, "bench"));
    const auto schedule = default_schedule(m->input_len());
    const auto fp = simulate_fingerprint({1000.0, 100.0}, schedule);
    std::vector<float> signal;
    for (const auto& c : fp.samples) signal.push_back(static_cast<float>(std::abs(c)));
    const auto t = time_single_prediction(*m, signal, trials);
    rows.push_back({{"method", m->name()}, {"median_ms", t.median_ms}, {"iqr_ms", t.iqr_ms}, {"trials", t.trials}});
  }
  std::cout << json{{"timing", rows}}.dump(2) << '\n';
  return 0;
}

int cmd_pipeline(Context& ctx, const std::string& config, const std::string& out) {
  PipelineConfig cfg;
  if (!config.empty()) {
    ctx.input(config);
    std::ifstream in(config);
    cfg = pipeline_config_from_json(json::parse(in));
  }
  if (ctx.g.seed_given || config.empty()) cfg.seed = ctx.g.seed;
  ctx.config.update({{"pipeline", to_json(cfg)}, {"out", out}});
  ctx.log_config();
  run_pipeline(cfg, out, [&](const std::string& s) { ctx.progress(s); });
  std::cerr << json{{"event", "manifest"}, {"path", (fs::path(out) / "manifest.json").string()}}.dump() << '\n';
  return 0;
}

int cmd_reproduce(Context& ctx, const std::string& manifest, const std::string& scratch_arg) {
  if (!fs::exists(manifest)) throw std::runtime_error("missing file: " + manifest);
  ctx.input(manifest);
  const fs::path scratch = scratch_arg.empty() ? fs::path(manifest).parent_path() / "reproduce" : fs::path(scratch_arg);
  ctx.config.update({{"manifest", manifest}, {"scratch", scratch.string()}});
  ctx.log_config();
  const auto r = reproduce(manifest, scratch, [&](const std::string& s) { ctx.progress(s); });
  for (const auto& p : r.problems) std::cerr << json{{"event", "problem"}, {"message", p}}.dump() << '\n';
  std::cerr << json{{"event", "reproduce"}, {"ok", r.ok()}, {"problems", r.problems.size()}}.dump() << '\n';
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrfnet: MR fingerprinting simulation, dictionary matching and recurrent regression"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--threads", ctx.g.threads, "worker threads (0 = all cores)");
  auto* seed_opt = app.add_option("--seed", ctx.g.seed, "master seed; stage seeds are derived from it");
  app.add_flag("-v,--verbose", ctx.g.verbose, "progress output on stderr");

  std::function<int()> run;

  auto* sim = app.add_subcommand("simulate", "simulate one fingerprint to CSV");
  double t1 = 0, t2 = 0;
  std::string schedule, out;
  std::size_t excitations = kDefaultExcitations;
  sim->add_option("--t1", t1, "T1 in ms")->required();
  sim->add_option("--t2", t2, "T2 in ms")->required();
  sim->add_option("--schedule", schedule, "schedule CSV (default: built-in)");
  sim->add_option("--excitations", excitations, "length of the built-in schedule");
  sim->add_option("--out", out, "output CSV")->required();
  sim->callback([&] { run = [&] { return cmd_simulate(ctx, t1, t2, schedule, excitations, out); }; });

  auto* dict = app.add_subcommand("dict", "dictionary operations");
  dict->require_subcommand(1);
  auto* build = dict->add_subcommand("build", "simulate a dictionary over a (T1, T2) grid");
  std::string grid;
  build->add_option("--grid", grid, "grid JSON file or inline JSON, or 'reference' / 'desk'");
  build->add_option("--schedule", schedule, "schedule CSV (default: built-in)");
  build->add_option("--excitations", excitations, "length of the built-in schedule");
  build->add_option("--out", out, "output name (writes <name>.dict and <name>.json)")->required();
  build->callback([&] { run = [&] { return cmd_dict_build(ctx, grid, schedule, excitations, out); }; });

  auto* mat = app.add_subcommand("match", "match signals against a dictionary");
  std::string dict_path, signals;
  mat->add_option("--dict", dict_path, "dictionary name")->required();
  mat->add_option("--signals", signals, "signals CSV (one per line) or .ds dataset")->required();
  mat->add_option("--out", out, "output CSV")->required();
  mat->callback([&] { run = [&] { return cmd_match(ctx, dict_path, signals, out); }; });

  auto* dsc = app.add_subcommand("dataset", "simulate a training or test set");
  std::size_t n = 0;
  std::string mode = "uniform";
  double noise = 0.0;
  dsc->add_option("--n", n, "number of signals")->required();
  dsc->add_option("--mode", mode, "grid or uniform");
  dsc->add_option("--noise", noise, "noise sigma relative to peak magnitude");
  dsc->add_option("--grid", grid, "grid for grid mode: JSON file or inline JSON, 'reference' or 'desk'");
  dsc->add_option("--schedule", schedule, "schedule CSV (default: built-in)");
  dsc->add_option("--excitations", excitations, "length of the built-in schedule");
  dsc->add_option("--out", out, "output .ds path")->required();
  dsc->callback([&] { run = [&] { return cmd_dataset(ctx, n, mode, noise, grid, schedule, excitations, out); }; });

  auto* tr = app.add_subcommand("train", "train a regressor");
  TrainFlags tf;
  tr->add_option("--model", tf.model, "gru, lstm, rnn, ann or cnn")->required()->check(CLI::IsMember({"gru", "lstm", "rnn", "ann", "cnn"}));
  tr->add_option("--data", tf.data, "training .ds")->required();
  tr->add_option("--config", tf.config, "TrainConfig JSON");
  tr->add_option("--out", tf.out, "output checkpoint")->required();
  tr->add_option("--batch-size", tf.batch_size);
  tr->add_option("--lr", tf.lr);
  tr->add_option("--final-lr", tf.final_lr, "geometric decay target (0 = constant)");
  tr->add_option("--patience", tf.patience);
  tr->add_option("--min-rel", tf.min_rel);
  tr->add_option("--max-epochs", tf.max_epochs);
  tr->add_option("--val-fraction", tf.val_fraction);
  tr->add_option("--hidden", tf.hidden, "recurrent hidden size");
  tr->add_option("--chunk", tf.chunk, "samples per recurrent step");
  tr->callback([&] { run = [&] { return cmd_train(ctx, tf); }; });

  auto* ev = app.add_subcommand("eval", "evaluate methods on a test set");
  std::vector<std::string> ckpts;
  std::string data;
  std::size_t trials = 100, batch = 500;
  bool no_timing = false;
  ev->add_option("--dict", dict_path, "dictionary name");
  ev->add_option("--ckpt", ckpts, "checkpoint(s)");
  ev->add_option("--data", data, "test .ds")->required();
  ev->add_option("--out", out, "report JSON (CSV tables are written alongside)")->required();
  ev->add_option("--trials", trials, "timing trials per method");
  ev->add_option("--batch", batch, "batch size for std across batches");
  ev->add_flag("--no-timing", no_timing);
  ev->callback([&] { run = [&] { return cmd_eval(ctx, dict_path, ckpts, data, out, trials, no_timing, batch); }; });

  auto* be = app.add_subcommand("bench", "single-signal latency");
  be->add_option("--dict", dict_path, "dictionary name");
  be->add_option("--ckpt", ckpts, "checkpoint(s)");
  be->add_option("--trials", trials, "timed calls per method");
  be->callback([&] { run = [&] { return cmd_bench(ctx, dict_path, ckpts, trials); }; });

  auto* pl = app.add_subcommand("pipeline", "dictionary, datasets, training and evaluation in one run");
  std::string config;
  pl->add_option("--config", config, "pipeline JSON (its seed is used unless --seed is given)");
  pl->add_option("--out", out, "run directory")->required();
  pl->callback([&] { run = [&] { return cmd_pipeline(ctx, config, out); }; });

  auto* rp = app.add_subcommand("reproduce", "re-run a recorded pipeline and verify digests");
  std::string manifest, scratch;
  rp->add_option("manifest", manifest, "run manifest JSON")->required();
  rp->add_option("--scratch", scratch, "directory for the re-run");
  rp->callback([&] { run = [&] { return cmd_reproduce(ctx, manifest, scratch); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  set_max_threads(ctx.g.threads);
  ctx.g.seed_given = seed_opt->count() > 0;
  for (auto* s : app.get_subcommands()) {
    ctx.command = s->get_name();
    for (auto* sub : s->get_subcommands()) ctx.command += " " + sub->get_name();
  }
  try {
    return run ? run() : 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", ctx.command}}.dump() << '\n';
    return 1;
  }
}
