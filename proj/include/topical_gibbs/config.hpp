#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "error.hpp"
#include "group_lasso.hpp"
#include "logistic_block.hpp"
#include "nmf.hpp"
#include "topic_block.hpp"

namespace topical_gibbs {

enum class Approximation {
  A1A2,    // NMF plug-in and frozen sigma_topic during the H sweep
  A1Only,  // NMF plug-in, sigma_topic recomputed for every proposal
};

struct InitOptions {
  bool map = true;  // group-lasso MAP for (alpha, beta0, omega); otherwise zeros
  GroupLassoOptions lasso;
  NmfOptions nmf;
};

struct FitConfig {
  int iterations = 20000;
  int burn_in = 1000;
  int topic_update_every = 10;
  int thin = 10;
  std::uint64_t seed = 1;
  TopicHyper topic;
  LogisticHyper logistic;
  int screen_cap = 50;
  Approximation approximation = Approximation::A1A2;
  TopicDesignPath design_path = TopicDesignPath::PseudoInverse;
  unsigned threads = 0;
  bool store_exposures = true;
  InitOptions init;

  SigmaMode sigma_mode() const {
    return approximation == Approximation::A1A2 ? SigmaMode::Frozen : SigmaMode::PerIteration;
  }

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (burn_in < 0) throw ConfigError("burn_in must be non-negative");
    if (topic_update_every < 1) throw ConfigError("topic_update_every must be at least 1");
    if (thin < 1) throw ConfigError("thin must be at least 1");
    if (screen_cap < 0) throw ConfigError("screen_cap must be non-negative");
    topic.validate();
    logistic.validate();
  }
};

// Everything a run needs besides the sampler settings.
struct RunConfig {
  FitConfig fit;
  std::string variants;
  std::string labels;
  std::string map;
  std::string source;
  std::string output;
  double hpd_mass = 0.8;
};

inline std::string to_string(Approximation a) { return a == Approximation::A1A2 ? "A1A2" : "A1Only"; }
inline std::string to_string(TopicDesignPath p) {
  return p == TopicDesignPath::PseudoInverse ? "pseudo_inverse" : "plug_in";
}

inline Approximation parse_approximation(const std::string& s) {
  if (s == "A1A2") return Approximation::A1A2;
  if (s == "A1Only") return Approximation::A1Only;
  throw ConfigError("unknown approximation '" + s + "' (expected A1A2 or A1Only)");
}

inline TopicDesignPath parse_design_path(const std::string& s) {
  if (s == "pseudo_inverse") return TopicDesignPath::PseudoInverse;
  if (s == "plug_in") return TopicDesignPath::PlugIn;
  throw ConfigError("unknown topic_design '" + s + "' (expected pseudo_inverse or plug_in)");
}

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
  const FitConfig& c = rc.fit;
  nlohmann::ordered_json j;
  j["data"] = {{"variants", rc.variants}, {"labels", rc.labels}, {"map", rc.map}, {"source", rc.source}};
  j["output"] = {{"dir", rc.output}};
  j["sampler"] = {{"iterations", c.iterations},
                  {"burn_in", c.burn_in},
                  {"topic_update_every", c.topic_update_every},
                  {"thin", c.thin},
                  {"seed", c.seed},
                  {"screen_cap", c.screen_cap},
                  {"approximation", to_string(c.approximation)},
                  {"topic_design", to_string(c.design_path)},
                  {"threads", c.threads},
                  {"store_exposures", c.store_exposures}};
  j["topic"] = {{"a_H", c.topic.a_H},
                {"b_H", c.topic.b_H},
                {"a_W", c.topic.a_W},
                {"b_W", c.topic.b_W},
                {"S", c.topic.S},
                {"block_size", c.topic.block_size},
                {"max_retries", c.topic.max_retries},
                {"target_acceptance", c.topic.target_acceptance},
                {"sigma_floor", c.topic.sigma_floor}};
  j["logistic"] = {{"tau0_alpha", c.logistic.tau0_alpha},
                   {"a_lambda", c.logistic.a_lambda},
                   {"b_lambda", c.logistic.b_lambda},
                   {"zero_norm_threshold", c.logistic.zero_norm_threshold}};
  j["init"] = {{"map", c.init.map},
               {"lasso_grid", c.init.lasso.grid_size},
               {"lasso_min_ratio", c.init.lasso.min_ratio},
               {"lasso_folds", c.init.lasso.folds},
               {"lasso_max_iterations", c.init.lasso.max_iterations},
               {"lasso_tolerance", c.init.lasso.tolerance},
               {"nmf_max_iterations", c.init.nmf.max_iterations},
               {"nmf_tolerance", c.init.nmf.tolerance}};
  j["report"] = {{"hpd_mass", rc.hpd_mass}};
  return j;
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& section, const std::string& path, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key " + path + "." + key + " has the wrong type");
  }
}

}  // namespace detail

// Reads a config document on top of `base`. Unknown sections and keys are
// rejected so typos cannot silently fall back to defaults.
inline RunConfig from_json(const nlohmann::json& doc, RunConfig rc = {}) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::ordered_json schema = to_json(RunConfig{});
  for (const auto& [section, body] : doc.items()) {
    if (!schema.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items())
      if (!schema[section].contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
  auto section = [&](const char* name) { return doc.contains(name) ? doc.at(name) : nlohmann::json::object(); };
  using detail::read_key;
  const auto data = section("data");
  read_key(data, "data", "variants", rc.variants);
  read_key(data, "data", "labels", rc.labels);
  read_key(data, "data", "map", rc.map);
  read_key(data, "data", "source", rc.source);
  read_key(section("output"), "output", "dir", rc.output);
  FitConfig& c = rc.fit;
  const auto s = section("sampler");
  read_key(s, "sampler", "iterations", c.iterations);
  read_key(s, "sampler", "burn_in", c.burn_in);
  read_key(s, "sampler", "topic_update_every", c.topic_update_every);
  read_key(s, "sampler", "thin", c.thin);
  read_key(s, "sampler", "seed", c.seed);
  read_key(s, "sampler", "screen_cap", c.screen_cap);
  read_key(s, "sampler", "threads", c.threads);
  read_key(s, "sampler", "store_exposures", c.store_exposures);
  if (s.contains("approximation")) {
    std::string a;
    read_key(s, "sampler", "approximation", a);
    c.approximation = parse_approximation(a);
  }
  if (s.contains("topic_design")) {
    std::string p;
    read_key(s, "sampler", "topic_design", p);
    c.design_path = parse_design_path(p);
  }
  const auto t = section("topic");
  read_key(t, "topic", "a_H", c.topic.a_H);
  read_key(t, "topic", "b_H", c.topic.b_H);
  read_key(t, "topic", "a_W", c.topic.a_W);
  read_key(t, "topic", "b_W", c.topic.b_W);
  read_key(t, "topic", "S", c.topic.S);
  read_key(t, "topic", "block_size", c.topic.block_size);
  read_key(t, "topic", "max_retries", c.topic.max_retries);
  read_key(t, "topic", "target_acceptance", c.topic.target_acceptance);
  read_key(t, "topic", "sigma_floor", c.topic.sigma_floor);
  const auto l = section("logistic");
  read_key(l, "logistic", "tau0_alpha", c.logistic.tau0_alpha);
  read_key(l, "logistic", "a_lambda", c.logistic.a_lambda);
  read_key(l, "logistic", "b_lambda", c.logistic.b_lambda);
  read_key(l, "logistic", "zero_norm_threshold", c.logistic.zero_norm_threshold);
  const auto i = section("init");
  read_key(i, "init", "map", c.init.map);
  read_key(i, "init", "lasso_grid", c.init.lasso.grid_size);
  read_key(i, "init", "lasso_min_ratio", c.init.lasso.min_ratio);
  read_key(i, "init", "lasso_folds", c.init.lasso.folds);
  read_key(i, "init", "lasso_max_iterations", c.init.lasso.max_iterations);
  read_key(i, "init", "lasso_tolerance", c.init.lasso.tolerance);
  read_key(i, "init", "nmf_max_iterations", c.init.nmf.max_iterations);
  read_key(i, "init", "nmf_tolerance", c.init.nmf.tolerance);
  read_key(section("report"), "report", "hpd_mass", rc.hpd_mass);
  if (!(rc.hpd_mass > 0 && rc.hpd_mass < 1)) throw ConfigError("report.hpd_mass must lie in (0, 1)");
  c.validate();
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc, std::move(base));
}

}  // namespace topical_gibbs
