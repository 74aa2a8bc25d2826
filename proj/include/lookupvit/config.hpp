#pragma once

// JSON run configuration. Unknown keys and wrong types are rejected with the
// offending field's dotted path.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lookupvit/model.hpp"
#include "lookupvit/optim.hpp"

namespace lookupvit {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double min_lr = 0.0;
  double warmup_fraction = 0.05;
  std::size_t eval_every = 100;
  double target_accuracy = 1.0;  // stop once every grid reaches this on the training set
  std::uint64_t seed = 0;

  LrSchedule schedule() const { return LrSchedule{lr, min_lr, steps, warmup_fraction}; }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

namespace config_detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw SchemaError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    const std::string field = path_.empty() ? key : path_ + "." + key;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw SchemaError(field + ": expected a boolean");
        out = it->template get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0)) {
          throw SchemaError(field + ": expected a nonnegative integer");
        }
        out = it->template get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw SchemaError(field + ": expected a number");
        out = it->template get<T>();
      } else if constexpr (std::is_same_v<T, Grid>) {
        if (!it->is_string()) throw SchemaError(field + ": expected a grid string like \"4x4\"");
        out = parse_grid(it->template get<std::string>());
      } else if constexpr (std::is_same_v<T, std::vector<Grid>>) {
        if (!it->is_array()) throw SchemaError(field + ": expected an array of grid strings");
        out.clear();
        for (const auto& g : *it) {
          if (!g.is_string()) throw SchemaError(field + ": expected an array of grid strings");
          out.push_back(parse_grid(g.template get<std::string>()));
        }
      } else if constexpr (std::is_same_v<T, Precision>) {
        const std::string s = it->is_string() ? it->template get<std::string>() : "";
        if (s == "f32") out = Precision::f32;
        else if (s == "f64") out = Precision::f64;
        else throw SchemaError(field + ": expected \"f32\" or \"f64\"");
      }
    } catch (const ConfigError& e) {
      throw SchemaError(field + ": " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    static const json empty = json::object();
    return Reader(it == obj_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw SchemaError((path_.empty() ? it.key() : path_ + "." + it.key()) + ": unknown key");
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_model(Reader r, ModelConfig& m) {
  r.get("depth", m.depth);
  r.get("dim", m.dim);
  r.get("heads", m.heads);
  r.get("p", m.p);
  r.get("q", m.q);
  r.get("input", m.input);
  r.get("channels", m.channels);
  r.get("patch", m.patch);
  r.get("compressed_grids", m.compressed_grids);
  r.get("num_classes", m.num_classes);
  r.get("scale_logits", m.scale_logits);
  r.get("output_projection", m.output_projection);
  r.get("seed", m.seed);
  r.get("precision", m.precision);
  r.get("layer_norm_eps", m.layer_norm_eps);
  Reader a = r.child("ablations");
  a.get("no_lookup_tokens", m.ablations.no_lookup_tokens);
  a.get("no_infuse", m.ablations.no_infuse);
  a.get("no_lookup_loss", m.ablations.no_lookup_loss);
  a.get("no_compressed_loss", m.ablations.no_compressed_loss);
  a.get("random_compressed_init", m.ablations.random_compressed_init);
  a.finish();
  r.finish();
}

inline void read_train(Reader r, TrainConfig& t) {
  r.get("steps", t.steps);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.lr);
  r.get("min_lr", t.min_lr);
  r.get("warmup_fraction", t.warmup_fraction);
  r.get("eval_every", t.eval_every);
  r.get("target_accuracy", t.target_accuracy);
  r.get("seed", t.seed);
  r.finish();
}

}  // namespace config_detail

inline nlohmann::json to_json(const ModelConfig& m) {
  nlohmann::json grids = nlohmann::json::array();
  for (const auto& g : m.compressed_grids) grids.push_back(g.str());
  return {
      {"depth", m.depth},
      {"dim", m.dim},
      {"heads", m.heads},
      {"p", m.p},
      {"q", m.q},
      {"input", m.input.str()},
      {"channels", m.channels},
      {"patch", m.patch.str()},
      {"compressed_grids", grids},
      {"num_classes", m.num_classes},
      {"scale_logits", m.scale_logits},
      {"output_projection", m.output_projection},
      {"seed", m.seed},
      {"precision", m.precision == Precision::f32 ? "f32" : "f64"},
      {"layer_norm_eps", m.layer_norm_eps},
      {"ablations",
       {{"no_lookup_tokens", m.ablations.no_lookup_tokens},
        {"no_infuse", m.ablations.no_infuse},
        {"no_lookup_loss", m.ablations.no_lookup_loss},
        {"no_compressed_loss", m.ablations.no_compressed_loss},
        {"random_compressed_init", m.ablations.random_compressed_init}}},
  };
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"steps", t.steps},           {"batch_size", t.batch_size},
          {"lr", t.lr},                 {"min_lr", t.min_lr},
          {"warmup_fraction", t.warmup_fraction}, {"eval_every", t.eval_every},
          {"target_accuracy", t.target_accuracy}, {"seed", t.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  config_detail::read_model(config_detail::Reader(j, "model"), m);
  m.validate();
  return m;
}

/// Parses a run configuration; every key is optional and defaults to the toy setup.
inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  config_detail::Reader root(j, "");
  config_detail::read_model(root.child("model"), rc.model);
  config_detail::read_train(root.child("train"), rc.train);
  root.finish();
  try {
    rc.model.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("model: ") + e.what());
  }
  if (rc.train.batch_size == 0) throw SchemaError("train.batch_size: must be at least 1");
  if (rc.train.steps == 0) throw SchemaError("train.steps: must be at least 1");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace lookupvit
