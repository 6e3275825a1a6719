#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "chain_store.hpp"
#include "sampler.hpp"

namespace topical_gibbs {

struct FitOptions {
  std::filesystem::path output;  // empty: keep the chain in memory only
  bool resume = false;           // continue from output/checkpoint.json
  nlohmann::ordered_json config_echo;
  std::function<void(std::uint64_t)> before_step;  // test hook; may throw
  std::function<void(std::uint64_t, std::uint64_t)> progress;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& output) { return output / "checkpoint.json"; }

// Runs initialization (record 0) and sweeps 1..burn_in + iterations, storing
// every thin-th sweep after burn-in. A failing sweep writes a checkpoint of
// the state before it and raises FitAborted.
inline ChainStore fit(const FitData& data, const FitConfig& cfg, const FitOptions& opt = {}) {
  cfg.validate();
  ChainStore store;
  store.manifest = build_manifest(data, cfg, opt.config_echo);
  GibbsSampler sampler(data, cfg);
  std::optional<ChainWriter> writer;
  std::uint64_t start = 1;

  if (opt.resume) {
    if (opt.output.empty()) throw ConfigError("resume needs an output directory");
    const Checkpoint ck = read_checkpoint(checkpoint_path(opt.output));
    if (ck.seed != cfg.seed || ck.data_digest != data.digest)
      throw ConfigError("checkpoint does not match this seed and data");
    ChainStore existing = read_archive(opt.output);
    if (existing.manifest != store.manifest) throw ConfigError("checkpoint archive was written with a different configuration");
    std::erase_if(existing.records, [&](const ChainRecord& r) { return r.iteration >= ck.next_iteration; });
    write_archive(opt.output, existing);
    store.records = std::move(existing.records);
    writer.emplace(opt.output, store.manifest, true);
    LogisticState lg = ck.logistic;
    sampler.set_state(ck.topic, std::move(lg), ck.acceptance);
    start = ck.next_iteration;
  } else {
    sampler.initialize();
    store.records.push_back(sampler.record(0));
    if (!opt.output.empty()) {
      writer.emplace(opt.output, store.manifest);
      writer->append(store.records.back());
    }
  }

  const std::uint64_t total = total_sweeps(cfg);
  Checkpoint snapshot;
  snapshot.seed = cfg.seed;
  snapshot.data_digest = data.digest;
  for (std::uint64_t t = start; t <= total; ++t) {
    if (!opt.output.empty()) {
      snapshot.next_iteration = t;
      snapshot.topic.Htilde = sampler.topic().Htilde;
      snapshot.topic.Wtilde = sampler.topic().Wtilde;
      snapshot.topic.sigma_topic = sampler.topic().sigma_topic;
      snapshot.logistic = sampler.logistic();
      snapshot.acceptance = sampler.last_acceptance();
    }
    try {
      if (opt.before_step) opt.before_step(t);
      sampler.step(t);
    } catch (const std::exception& e) {
      std::string where;
      if (!opt.output.empty()) {
        where = checkpoint_path(opt.output).string();
        write_checkpoint(where, snapshot);
      }
      throw FitAborted(t, where, e.what());
    }
    if (is_stored_iteration(cfg, t)) {
      store.records.push_back(sampler.record(t));
      if (writer) writer->append(store.records.back());
    }
    if (opt.progress) opt.progress(t, total);
  }
  if (!opt.output.empty()) std::filesystem::remove(checkpoint_path(opt.output));
  return store;
}

}  // namespace topical_gibbs
