#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/digest.hpp"

namespace mrfnet {

/// Relaxation times of one tissue, in milliseconds.
struct TissueParams {
  double t1_ms = 0.0;
  double t2_ms = 0.0;

  friend bool operator==(const TissueParams&, const TissueParams&) = default;
};

// Dictionary labels and training targets must be physical: T1, T2 > 0 and T2 <= T1.
inline void validate_tissue(const TissueParams& p) {
  if (!(p.t1_ms > 0.0) || !(p.t2_ms > 0.0) || !std::isfinite(p.t1_ms) || !std::isfinite(p.t2_ms))
    throw std::invalid_argument("tissue parameters must be finite and positive (T1=" +
                                std::to_string(p.t1_ms) + ", T2=" + std::to_string(p.t2_ms) + ")");
  if (p.t2_ms > p.t1_ms)
    throw std::invalid_argument("tissue parameters violate T2 <= T1 (T1=" + std::to_string(p.t1_ms) +
                                ", T2=" + std::to_string(p.t2_ms) + ")");
}

/// Per-excitation RF and timing plus preparation settings.
struct SequenceSchedule {
  std::vector<double> flip_angles_rad;
  std::vector<double> rf_phases_rad;
  std::vector<double> tr_ms;
  double te_ms = 0.0;
  bool inversion_prep = true;
  double inversion_delay_ms = 0.0;

  std::size_t size() const { return flip_angles_rad.size(); }

  void validate() const {
    const std::size_t n = flip_angles_rad.size();
    if (n == 0) throw std::invalid_argument("schedule has no excitations");
    if (rf_phases_rad.size() != n || tr_ms.size() != n)
      throw std::invalid_argument("schedule arrays differ in length (flip " + std::to_string(n) +
                                  ", phase " + std::to_string(rf_phases_rad.size()) + ", tr " +
                                  std::to_string(tr_ms.size()) + ")");
    double min_tr = tr_ms[0];
    for (std::size_t i = 0; i < n; ++i) {
      const double a = flip_angles_rad[i];
      if (!std::isfinite(a) || a < 0.0 || a > std::numbers::pi + 1e-12)
        throw std::invalid_argument("flip angle out of [0, pi] at excitation " + std::to_string(i));
      if (!std::isfinite(rf_phases_rad[i]))
        throw std::invalid_argument("non-finite RF phase at excitation " + std::to_string(i));
      if (!(tr_ms[i] > 0.0) || !std::isfinite(tr_ms[i]))
        throw std::invalid_argument("TR must be positive at excitation " + std::to_string(i));
      min_tr = std::min(min_tr, tr_ms[i]);
    }
    if (!(te_ms >= 0.0) || !(te_ms < min_tr))
      throw std::invalid_argument("TE must satisfy 0 <= TE < min(TR)");
    if (!(inversion_delay_ms >= 0.0) || !std::isfinite(inversion_delay_ms))
      throw std::invalid_argument("inversion delay must be nonnegative");
  }
};

inline constexpr double kDefaultTrMs = 4.3;
inline constexpr std::size_t kDefaultExcitations = 1750;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// Built-in schedule: inversion, then flip angles 10 + 50|sin(pi i / 250)| degrees,
// zero phase, constant TR. Users with the real acquisition schedule load it from CSV.
inline SequenceSchedule default_schedule(std::size_t n = kDefaultExcitations) {
  SequenceSchedule s;
  s.flip_angles_rad.resize(n);
  s.rf_phases_rad.assign(n, 0.0);
  s.tr_ms.assign(n, kDefaultTrMs);
  for (std::size_t i = 0; i < n; ++i) {
    const double deg =
        10.0 + 50.0 * std::abs(std::sin(std::numbers::pi * static_cast<double>(i) / 250.0));
    s.flip_angles_rad[i] = deg_to_rad(deg);
  }
  return s;
}

namespace detail {
inline void append_shortest(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  out.append(buf, end);
}

inline double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t' || last[-1] == '\r')) --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw std::invalid_argument("cannot parse number '" + text + "' in " + where);
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}
}  // namespace detail

inline constexpr const char* kScheduleHeader = "index,flip_deg,phase_deg,tr_ms";

// Canonical CSV text; numbers use the shortest round-trip representation.
inline std::string canonical_schedule_csv(const SequenceSchedule& s) {
  std::string out = kScheduleHeader;
  out.push_back('\n');
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(i);
    out.push_back(',');
    detail::append_shortest(out, rad_to_deg(s.flip_angles_rad[i]));
    out.push_back(',');
    detail::append_shortest(out, rad_to_deg(s.rf_phases_rad[i]));
    out.push_back(',');
    detail::append_shortest(out, s.tr_ms[i]);
    out.push_back('\n');
  }
  return out;
}

inline std::string schedule_digest(const SequenceSchedule& s) {
  return sha256_hex(canonical_schedule_csv(s));
}

inline nlohmann::json schedule_prep_json(const SequenceSchedule& s) {
  return {{"inversion_prep", s.inversion_prep},
          {"inversion_delay_ms", s.inversion_delay_ms},
          {"te_ms", s.te_ms}};
}

// Sidecar lives next to the CSV: "fisp.csv" -> "fisp.json".
inline std::filesystem::path schedule_sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

inline SequenceSchedule parse_schedule_csv(std::istream& in, const std::string& where) {
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != kScheduleHeader)
    throw std::invalid_argument(where + ": expected header '" + std::string(kScheduleHeader) + "'");
  SequenceSchedule s;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string at = where + " row " + std::to_string(row + 1);
    if (f.size() != 4) throw std::invalid_argument(at + ": expected 4 fields");
    if (detail::parse_double(f[0], at) != static_cast<double>(row))
      throw std::invalid_argument(at + ": index out of sequence");
    s.flip_angles_rad.push_back(deg_to_rad(detail::parse_double(f[1], at)));
    s.rf_phases_rad.push_back(deg_to_rad(detail::parse_double(f[2], at)));
    s.tr_ms.push_back(detail::parse_double(f[3], at));
    ++row;
  }
  return s;
}

inline void apply_prep_json(SequenceSchedule& s, const nlohmann::json& j) {
  s.inversion_prep = j.value("inversion_prep", s.inversion_prep);
  s.inversion_delay_ms = j.value("inversion_delay_ms", s.inversion_delay_ms);
  s.te_ms = j.value("te_ms", s.te_ms);
}

/// Loads a schedule CSV and, when present, its JSON preparation sidecar.
inline SequenceSchedule load_schedule(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open schedule file: " + csv.string());
  SequenceSchedule s = parse_schedule_csv(in, csv.string());
  const auto sidecar = schedule_sidecar_path(csv);
  if (std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    apply_prep_json(s, nlohmann::json::parse(js));
  }
  s.validate();
  return s;
}

inline void save_schedule(const SequenceSchedule& s, const std::filesystem::path& csv) {
  {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write schedule file: " + csv.string());
    out << canonical_schedule_csv(s);
  }
  std::ofstream js(schedule_sidecar_path(csv));
  js << schedule_prep_json(s).dump(2) << '\n';
}

}  // namespace mrfnet
