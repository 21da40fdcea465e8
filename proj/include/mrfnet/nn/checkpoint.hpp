#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrfnet/binary_io.hpp"
#include "mrfnet/labels.hpp"
#include "mrfnet/nn/model.hpp"

namespace mrfnet::nn {

/// Trained network: architecture, f32 parameters in declaration order, label scaling.
struct ModelCheckpoint {
  ModelSpec spec;
  std::vector<float> params;
  LabelScaler scaler;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();

  static ModelCheckpoint from_model(const Model& m, const LabelScaler& scaler, std::uint64_t seed,
                                    nlohmann::json metadata = nlohmann::json::object()) {
    ModelCheckpoint c{m.spec(), {}, scaler, seed, std::move(metadata)};
    c.params.reserve(m.size());
    for (double p : m.params()) c.params.push_back(static_cast<float>(p));
    return c;
  }

  Model to_model() const {
    Model m(spec);
    if (params.size() != m.size())
      throw std::runtime_error("checkpoint holds " + std::to_string(params.size()) + " parameters, architecture needs " +
                               std::to_string(m.size()));
    std::vector<double> p(params.begin(), params.end());
    m.set_params(p);
    return m;
  }
};

inline constexpr const char* kCheckpointDelimiter = "--- mrfnet f32le parameters ---";

inline nlohmann::json checkpoint_header(const ModelCheckpoint& c) {
  return {{"format", "mrfnet-ckpt"},
          {"version", 1},
          {"model", to_json(c.spec)},
          {"label_scaling", to_json(c.scaler)},
          {"seed", c.seed},
          {"n_params", c.params.size()},
          {"training", c.metadata}};
}

// Layout: one line of JSON header, the delimiter line, then the raw f32 blob.
inline void write_checkpoint(const ModelCheckpoint& c, std::ostream& out) {
  out << checkpoint_header(c).dump() << '\n' << kCheckpointDelimiter << '\n';
  io::write_f32(out, c.params);
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  write_checkpoint(c, out);
}

inline ModelCheckpoint read_checkpoint(std::istream& in, const std::string& where) {
  std::string header, line;
  bool found = false;
  while (std::getline(in, line)) {
    if (line == kCheckpointDelimiter) {
      found = true;
      break;
    }
    header += line;
    header.push_back('\n');
  }
  if (!found) throw std::runtime_error(where + ": checkpoint delimiter line not found");
  const auto j = nlohmann::json::parse(header);
  if (j.value("format", "") != "mrfnet-ckpt") throw std::runtime_error(where + ": not an mrfnet checkpoint");
  ModelCheckpoint c;
  c.spec = model_spec_from_json(j.at("model"));
  c.scaler = label_scaler_from_json(j.at("label_scaling"));
  c.seed = j.value("seed", std::uint64_t{0});
  c.metadata = j.value("training", nlohmann::json::object());
  c.params.resize(j.at("n_params").get<std::size_t>());
  if (c.params.size() != param_count(c.spec))
    throw std::runtime_error(where + ": parameter count does not match the recorded architecture");
  io::read_f32(in, c.params, "checkpoint parameters");
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(where + ": trailing bytes after parameters");
  return c;
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace mrfnet::nn
