#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/binary_io.hpp"
#include "mrfnet/epg.hpp"
#include "mrfnet/parallel.hpp"
#include "mrfnet/schedule.hpp"

namespace mrfnet {

struct GridSegment {
  double start_ms = 0.0;
  double stop_ms = 0.0;
  double step_ms = 1.0;

  friend bool operator==(const GridSegment&, const GridSegment&) = default;
};

/// Piecewise-uniform T1 and T2 axes; each segment is an inclusive [start:step:stop] range.
struct GridSpec {
  std::vector<GridSegment> t1_segments;
  std::vector<GridSegment> t2_segments;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// T1 = [0:2:500] [500:5:1000] [1000:10:2000] [2000:50:4000] ms,
// T2 = [0:1:100] [100:2:500] ms.
inline GridSpec reference_grid() {
  return {{{0, 500, 2}, {500, 1000, 5}, {1000, 2000, 10}, {2000, 4000, 50}},
          {{0, 100, 1}, {100, 500, 2}}};
}

// Coarser grid over the same extents, 9,894 atoms.
inline GridSpec desk_grid() {
  return {{{0, 500, 10}, {500, 1000, 20}, {1000, 2000, 40}, {2000, 4000, 100}},
          {{0, 100, 3}, {100, 500, 6}}};
}

inline nlohmann::json to_json(const GridSpec& g) {
  auto segs = [](const std::vector<GridSegment>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : v) a.push_back({s.start_ms, s.stop_ms, s.step_ms});
    return a;
  };
  return {{"t1_segments", segs(g.t1_segments)}, {"t2_segments", segs(g.t2_segments)}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  auto segs = [](const nlohmann::json& a, const char* key) {
    std::vector<GridSegment> v;
    if (!a.is_array()) throw std::invalid_argument(std::string("grid: '") + key + "' must be an array");
    for (const auto& s : a) {
      if (!s.is_array() || s.size() != 3)
        throw std::invalid_argument(std::string("grid: '") + key + "' entries must be [start, stop, step]");
      v.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
    }
    return v;
  };
  return {segs(j.at("t1_segments"), "t1_segments"), segs(j.at("t2_segments"), "t2_segments")};
}

// Sorted, deduplicated, strictly positive axis values.
inline std::vector<double> expand_axis(const std::vector<GridSegment>& segments) {
  std::vector<double> values;
  for (const auto& s : segments) {
    if (!(s.step_ms > 0.0) || !(s.stop_ms >= s.start_ms) || s.start_ms < 0.0 ||
        !std::isfinite(s.stop_ms))
      throw std::invalid_argument("grid segment needs step > 0, 0 <= start <= stop");
    const auto count =
        static_cast<std::size_t>(std::floor((s.stop_ms - s.start_ms) / s.step_ms + 1e-9)) + 1;
    for (std::size_t k = 0; k < count; ++k)
      values.push_back(s.start_ms + static_cast<double>(k) * s.step_ms);
  }
  std::sort(values.begin(), values.end());
  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); };
  values.erase(std::unique(values.begin(), values.end(), same), values.end());
  std::erase_if(values, [](double v) { return v <= 0.0; });
  return values;
}

/// Cartesian product of the expanded axes restricted to T2 <= T1, ordered by (T1, T2).
inline std::vector<TissueParams> expand_grid(const GridSpec& spec) {
  const auto t1 = expand_axis(spec.t1_segments);
  const auto t2 = expand_axis(spec.t2_segments);
  std::vector<TissueParams> pairs;
  for (double a : t1)
    for (double b : t2)
      if (b <= a) pairs.push_back({a, b});
  if (pairs.empty()) throw std::invalid_argument("grid expands to no valid (T1, T2) pairs");
  return pairs;
}

/// Row-normalised magnitude fingerprints with their labels.
struct Dictionary {
  std::size_t n_atoms = 0;
  std::size_t n_samples = 0;
  std::vector<float> atoms;  // n_atoms x n_samples, row-major
  std::vector<TissueParams> labels;
  std::string schedule_digest;
  GridSpec grid;

  std::span<const float> row(std::size_t i) const {
    return {atoms.data() + i * n_samples, n_samples};
  }
};

inline std::vector<float> normalized_magnitude(const Fingerprint& fp) {
  const auto mag = fp.magnitude();
  double norm = 0.0;
  for (double v : mag) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw std::invalid_argument("fingerprint has zero or non-finite norm");
  std::vector<float> out(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) out[i] = static_cast<float>(mag[i] / norm);
  return out;
}

inline Dictionary build_dictionary(const GridSpec& spec, const SequenceSchedule& schedule,
                                   const SimulationOptions& options = {}) {
  schedule.validate();
  Dictionary d;
  d.labels = expand_grid(spec);
  d.grid = spec;
  d.n_atoms = d.labels.size();
  d.n_samples = schedule.size();
  d.schedule_digest = schedule_digest(schedule);
  d.atoms.resize(d.n_atoms * d.n_samples);
  parallel_for(d.n_atoms, [&](std::size_t i) {
    const auto row = normalized_magnitude(simulate_fingerprint(d.labels[i], schedule, options));
    std::copy(row.begin(), row.end(), d.atoms.begin() + static_cast<std::ptrdiff_t>(i * d.n_samples));
  });
  return d;
}

struct MatchResult {
  TissueParams params;
  double score = 0.0;
  std::size_t index = 0;
};

namespace match_detail {
inline constexpr std::size_t kBlockRows = 64;

template <typename T>
Eigen::VectorXd normalized_query(const Dictionary& dict, std::span<const T> query) {
  if (query.size() != dict.n_samples)
    throw std::invalid_argument("query length " + std::to_string(query.size()) +
                                " does not match dictionary length " + std::to_string(dict.n_samples));
  Eigen::VectorXd q(static_cast<Eigen::Index>(query.size()));
  for (std::size_t i = 0; i < query.size(); ++i) q[static_cast<Eigen::Index>(i)] = static_cast<double>(query[i]);
  const double norm = q.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw std::invalid_argument("query has zero or non-finite norm");
  return q / norm;
}
}  // namespace match_detail

/// Exhaustive maximum normalised dot product. Ties go to the lowest row index.
template <typename T>
MatchResult match(const Dictionary& dict, std::span<const T> query) {
  using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (dict.n_atoms == 0) throw std::invalid_argument("match: empty dictionary");
  const Eigen::VectorXd q = match_detail::normalized_query(dict, query);
  const auto n = static_cast<Eigen::Index>(dict.n_samples);

  MatchResult best;
  best.score = -std::numeric_limits<double>::infinity();
  RowMatD block;
  Eigen::VectorXd scores;
  for (std::size_t r0 = 0; r0 < dict.n_atoms; r0 += match_detail::kBlockRows) {
    const auto rows = static_cast<Eigen::Index>(std::min(match_detail::kBlockRows, dict.n_atoms - r0));
    Eigen::Map<const RowMatF> atoms(dict.atoms.data() + r0 * dict.n_samples, rows, n);
    block = atoms.cast<double>();
    scores.noalias() = block * q;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (scores[r] > best.score) {
        best.score = scores[r];
        best.index = r0 + static_cast<std::size_t>(r);
      }
    }
  }
  best.params = dict.labels[best.index];
  return best;
}

template <typename T>
MatchResult match(const Dictionary& dict, const std::vector<T>& query) {
  return match(dict, std::span<const T>(query));
}

struct BatchMatch {
  std::optional<MatchResult> result;
  std::string error;
};

/// Matches n_queries row-major queries; one entry per query, in input order.
template <typename T>
std::vector<BatchMatch> match_batch(const Dictionary& dict, std::span<const T> queries,
                                    std::size_t n_queries) {
  if (n_queries * dict.n_samples != queries.size())
    throw std::invalid_argument("match_batch: query block of " + std::to_string(queries.size()) +
                                " values is not " + std::to_string(n_queries) + " x " +
                                std::to_string(dict.n_samples));
  std::vector<BatchMatch> out(n_queries);
  parallel_for(n_queries, [&](std::size_t i) {
    try {
      out[i].result = match(dict, queries.subspan(i * dict.n_samples, dict.n_samples));
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

// File pair: "<name>.dict" (binary atoms) and "<name>.json" (manifest).
inline std::filesystem::path dictionary_stem(std::filesystem::path name) {
  if (name.extension() == ".dict" || name.extension() == ".json") name.replace_extension();
  return name;
}

inline constexpr std::uint32_t kDictionaryVersion = 1;

inline void write_dictionary_binary(const Dictionary& d, std::ostream& out) {
  io::write_magic(out, "MRFD");
  io::write_le<std::uint32_t>(out, kDictionaryVersion);
  io::write_le<std::uint64_t>(out, d.n_atoms);
  io::write_le<std::uint64_t>(out, d.n_samples);
  io::write_f32(out, d.atoms);
}

inline nlohmann::json dictionary_manifest(const Dictionary& d) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& p : d.labels) labels.push_back({p.t1_ms, p.t2_ms});
  return {{"format", "mrfd"},
          {"version", kDictionaryVersion},
          {"n_atoms", d.n_atoms},
          {"n_samples", d.n_samples},
          {"grid", to_json(d.grid)},
          {"schedule_digest", d.schedule_digest},
          {"labels", labels}};
}

inline void save_dictionary(const Dictionary& d, const std::filesystem::path& name) {
  const auto stem = dictionary_stem(name);
  auto bin = stem;
  bin += ".dict";
  auto js = stem;
  js += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dictionary: " + bin.string());
    write_dictionary_binary(d, out);
  }
  std::ofstream out(js);
  if (!out) throw std::runtime_error("cannot write dictionary manifest: " + js.string());
  out << dictionary_manifest(d).dump() << '\n';
}

inline Dictionary load_dictionary(const std::filesystem::path& name) {
  const auto stem = dictionary_stem(name);
  auto bin = stem;
  bin += ".dict";
  auto js = stem;
  js += ".json";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dictionary: " + bin.string());
  io::expect_magic(in, "MRFD", bin.string());
  const auto version = io::read_le<std::uint32_t>(in, "dictionary version");
  if (version != kDictionaryVersion)
    throw std::runtime_error(bin.string() + ": unsupported dictionary version " + std::to_string(version));
  Dictionary d;
  d.n_atoms = io::read_le<std::uint64_t>(in, "atom count");
  d.n_samples = io::read_le<std::uint64_t>(in, "sample count");
  d.atoms.resize(d.n_atoms * d.n_samples);
  io::read_f32(in, d.atoms, "dictionary atoms");

  std::ifstream jin(js);
  if (!jin) throw std::runtime_error("cannot open dictionary manifest: " + js.string());
  const auto j = nlohmann::json::parse(jin);
  if (j.at("n_atoms").get<std::size_t>() != d.n_atoms || j.at("n_samples").get<std::size_t>() != d.n_samples)
    throw std::runtime_error(js.string() + ": manifest shape disagrees with " + bin.string());
  d.grid = grid_from_json(j.at("grid"));
  d.schedule_digest = j.at("schedule_digest").get<std::string>();
  for (const auto& l : j.at("labels")) d.labels.push_back({l[0].get<double>(), l[1].get<double>()});
  if (d.labels.size() != d.n_atoms)
    throw std::runtime_error(js.string() + ": label count does not match atom count");
  return d;
}

}  // namespace mrfnet
