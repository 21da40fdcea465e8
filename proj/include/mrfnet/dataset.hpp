#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/binary_io.hpp"
#include "mrfnet/dictionary.hpp"
#include "mrfnet/epg.hpp"
#include "mrfnet/parallel.hpp"
#include "mrfnet/random.hpp"

namespace mrfnet {

enum class SamplingMode { grid, uniform };

inline std::string to_string(SamplingMode m) { return m == SamplingMode::grid ? "grid" : "uniform"; }

inline SamplingMode sampling_mode_from_string(const std::string& s) {
  if (s == "grid") return SamplingMode::grid;
  if (s == "uniform") return SamplingMode::uniform;
  throw std::invalid_argument("unknown sampling mode '" + s + "' (expected grid or uniform)");
}

// Continuous sampling box for uniform mode, ms.
inline constexpr double kUniformT1Min = 2.0, kUniformT1Max = 4000.0;
inline constexpr double kUniformT2Min = 1.0, kUniformT2Max = 500.0;

/// Magnitude signals with aligned (T1, T2) labels.
struct Dataset {
  std::size_t n_samples = 0;
  std::vector<float> signals;  // size() x n_samples, row-major
  std::vector<TissueParams> labels;
  std::string provenance;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::string schedule_digest;

  std::size_t size() const { return labels.size(); }
  std::span<const float> signal(std::size_t i) const { return {signals.data() + i * n_samples, n_samples}; }
};

// Labels are drawn into an f32 buffer so the on-disk form is exact.
inline std::vector<TissueParams> draw_labels(std::size_t n, SamplingMode mode, Rng& rng, const GridSpec& grid) {
  std::vector<float> raw;
  raw.reserve(2 * n);
  if (mode == SamplingMode::grid) {
    const auto points = expand_grid(grid);
    std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = points[pick(rng)];
      raw.push_back(static_cast<float>(p.t1_ms));
      raw.push_back(static_cast<float>(p.t2_ms));
    }
  } else {
    std::uniform_real_distribution<double> t1(kUniformT1Min, kUniformT1Max);
    std::uniform_real_distribution<double> t2(kUniformT2Min, kUniformT2Max);
    while (raw.size() < 2 * n) {
      const double a = t1(rng), b = t2(rng);
      if (b > a) continue;
      raw.push_back(static_cast<float>(a));
      raw.push_back(static_cast<float>(b));
    }
  }
  std::vector<TissueParams> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = {raw[2 * i], raw[2 * i + 1]};
  return labels;
}

/// Simulated training or test set. Noise of standard deviation noise_sigma * peak|signal|
/// is added independently to the real and imaginary parts before taking magnitudes.
inline Dataset sample_dataset(std::size_t n, const SequenceSchedule& schedule, SamplingMode mode,
                              double noise_sigma, std::uint64_t seed, const GridSpec& grid = reference_grid()) {
  if (n == 0) throw std::invalid_argument("sample_dataset: n must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw std::invalid_argument("sample_dataset: noise sigma must be nonnegative");
  schedule.validate();

  Dataset ds;
  ds.n_samples = schedule.size();
  ds.provenance = to_string(mode);
  ds.seed = seed;
  ds.noise_sigma = noise_sigma;
  ds.schedule_digest = schedule_digest(schedule);

  Rng label_rng(derive_seed(seed, "labels"));
  ds.labels = draw_labels(n, mode, label_rng, grid);
  ds.signals.resize(n * ds.n_samples);

  const std::uint64_t noise_seed = derive_seed(seed, "noise");
  parallel_for(n, [&](std::size_t i) {
    const auto fp = simulate_fingerprint(ds.labels[i], schedule);
    float* out = ds.signals.data() + i * ds.n_samples;
    if (noise_sigma == 0.0) {
      for (std::size_t k = 0; k < ds.n_samples; ++k) out[k] = static_cast<float>(std::abs(fp.samples[k]));
      return;
    }
    double peak = 0.0;
    for (const auto& c : fp.samples) peak = std::max(peak, std::abs(c));
    Rng rng(derive_seed(noise_seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> noise(0.0, noise_sigma * peak);
    for (std::size_t k = 0; k < ds.n_samples; ++k) {
      const double re = fp.samples[k].real() + noise(rng);
      const double im = fp.samples[k].imag() + noise(rng);
      out[k] = static_cast<float>(std::hypot(re, im));
    }
  });
  return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::filesystem::path dataset_sidecar_path(const std::filesystem::path& ds) {
  auto p = ds;
  p += ".json";
  return p;
}

inline void write_dataset_binary(const Dataset& ds, std::ostream& out) {
  io::write_magic(out, "MRFS");
  io::write_le<std::uint32_t>(out, kDatasetVersion);
  io::write_le<std::uint64_t>(out, ds.size());
  io::write_le<std::uint64_t>(out, ds.n_samples);
  io::write_f32(out, ds.signals);
  std::vector<float> labels;
  labels.reserve(2 * ds.size());
  for (const auto& l : ds.labels) {
    labels.push_back(static_cast<float>(l.t1_ms));
    labels.push_back(static_cast<float>(l.t2_ms));
  }
  io::write_f32(out, labels);
}

inline nlohmann::json dataset_sidecar(const Dataset& ds) {
  return {{"format", "mrfs"},
          {"version", kDatasetVersion},
          {"n_signals", ds.size()},
          {"n_samples", ds.n_samples},
          {"provenance", ds.provenance},
          {"seed", ds.seed},
          {"noise_sigma", ds.noise_sigma},
          {"schedule_digest", ds.schedule_digest}};
}

/// Writes "<path>" (binary) and "<path>.json" (provenance sidecar).
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset: " + path.string());
    write_dataset_binary(ds, out);
  }
  std::ofstream js(dataset_sidecar_path(path));
  js << dataset_sidecar(ds).dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  io::expect_magic(in, "MRFS", path.string());
  const auto version = io::read_le<std::uint32_t>(in, "dataset version");
  if (version != kDatasetVersion)
    throw std::runtime_error(path.string() + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  const auto count = io::read_le<std::uint64_t>(in, "signal count");
  ds.n_samples = io::read_le<std::uint64_t>(in, "sample count");
  ds.signals.resize(count * ds.n_samples);
  io::read_f32(in, ds.signals, "signals");
  std::vector<float> labels(2 * count);
  io::read_f32(in, labels, "labels");
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) ds.labels[i] = {labels[2 * i], labels[2 * i + 1]};

  const auto sidecar = dataset_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    const auto j = nlohmann::json::parse(js);
    ds.provenance = j.value("provenance", "");
    ds.seed = j.value("seed", std::uint64_t{0});
    ds.noise_sigma = j.value("noise_sigma", 0.0);
    ds.schedule_digest = j.value("schedule_digest", "");
  }
  return ds;
}

}  // namespace mrfnet
