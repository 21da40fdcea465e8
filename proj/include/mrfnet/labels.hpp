#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "mrfnet/schedule.hpp"

namespace mrfnet {

/// Maps (T1, T2) in ms to network targets by dividing by the grid extents.
struct LabelScaler {
  double t1_max = 4000.0;
  double t2_max = 500.0;

  void validate() const {
    if (!(t1_max > 0.0) || !(t2_max > 0.0)) throw std::invalid_argument("label scaler constants must be positive");
  }

  std::array<double, 2> scale(const TissueParams& p) const {
    validate();
    return {p.t1_ms / t1_max, p.t2_ms / t2_max};
  }

  TissueParams unscale(std::array<double, 2> y) const {
    validate();
    return {y[0] * t1_max, y[1] * t2_max};
  }

  std::vector<std::array<double, 2>> scale(std::span<const TissueParams> labels) const {
    std::vector<std::array<double, 2>> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(scale(l));
    return out;
  }

  std::vector<TissueParams> unscale(std::span<const std::array<double, 2>> preds) const {
    std::vector<TissueParams> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(unscale(p));
    return out;
  }
};

inline nlohmann::json to_json(const LabelScaler& s) { return {{"t1_max", s.t1_max}, {"t2_max", s.t2_max}}; }

inline LabelScaler label_scaler_from_json(const nlohmann::json& j) {
  LabelScaler s{j.at("t1_max").get<double>(), j.at("t2_max").get<double>()};
  s.validate();
  return s;
}

}  // namespace mrfnet
