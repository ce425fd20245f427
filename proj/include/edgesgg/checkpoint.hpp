#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesgg/dual_mpnn.hpp"
#include "edgesgg/error.hpp"
#include "edgesgg/synthetic.hpp"
#include "edgesgg/tensor.hpp"

namespace edgesgg {

inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, t] : store) {
    const Matrix& v = t.value();
    out[name] = {{"shape", {v.rows(), v.cols()}},
                 {"data", std::vector<double>(v.data(), v.data() + v.size())}};
  }
  return out;
}

// Overwrites the values of `store`; every parameter must be present with its exact shape.
inline void load_params(const nlohmann::json& j, ParamStore& store) {
  require(j.is_object(), ErrorKind::data, "checkpoint params must be an object");
  require(j.size() == store.size(), ErrorKind::data, "checkpoint has a different parameter set");
  for (auto& [name, t] : store) {
    require(j.contains(name), ErrorKind::data, "checkpoint is missing parameter " + name);
    const auto& p = j[name];
    auto shape = p.at("shape").get<std::vector<long>>();
    require(shape.size() == 2 && shape[0] == t.rows() && shape[1] == t.cols(), ErrorKind::data,
            "shape mismatch for parameter " + name);
    auto data = p.at("data").get<std::vector<double>>();
    require(static_cast<Index>(data.size()) == t.rows() * t.cols(), ErrorKind::data,
            "data length mismatch for parameter " + name);
    std::copy(data.begin(), data.end(), t.value().data());
    t.zero_grad();
  }
}

struct Checkpoint {
  std::uint64_t seed{0};
  DualMPNNConfig config;
  WorldSpec world;
  std::vector<std::size_t> predicate_counts;  // training support per relation class
  ParamStore params;
};

inline nlohmann::json to_json(const Checkpoint& c) {
  return {{"seed", c.seed},
          {"config", c.config},
          {"world", c.world},
          {"predicate_counts", c.predicate_counts},
          {"params", params_to_json(c.params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config = j.at("config").get<DualMPNNConfig>();
    c.world = j.at("world").get<WorldSpec>();
    c.predicate_counts = j.value("predicate_counts", std::vector<std::size_t>{});
    c.params = make_params(c.config, c.seed);
    load_params(j.at("params"), c.params);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  require(out.good(), ErrorKind::data, "write failed for " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::data, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, "malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace edgesgg
