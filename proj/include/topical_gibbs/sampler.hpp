#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "genome_data.hpp"
#include "group_lasso.hpp"
#include "logistic_block.hpp"
#include "nmf.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "topic_block.hpp"

namespace topical_gibbs {

// Dense, sampler-ready view of the data: labels, burdens, the screened
// normalized residual columns, V and Vnorm, plus identifiers for the manifest.
struct FitData {
  std::vector<int> labels;
  std::vector<double> burden;
  Eigen::MatrixXd residual;  // N x J0
  Eigen::VectorXd sigma_obs; // J0
  Eigen::MatrixXd vnorm;     // N x P
  Eigen::MatrixXi counts;    // V, N x P
  int n_classes = 0;

  std::vector<std::string> screened_variants;
  std::vector<std::string> categories;
  std::vector<std::string> classes;
  std::vector<std::string> tumors;
  std::string source;
  std::string digest;
  int n_variants = 0;
  int dropped_zero_burden = 0;

  int n_tumors() const { return static_cast<int>(labels.size()); }
  int n_residual() const { return static_cast<int>(residual.cols()); }
  int n_categories() const { return static_cast<int>(counts.cols()); }

  DesignInputs design_inputs() const { return {&residual, &sigma_obs, &vnorm, burden}; }
};

// FNV-1a over raw bytes, rendered as 16 hex digits.
class Fnv1a {
 public:
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void add_vector(const std::vector<T>& v) {
    const std::uint64_t n = v.size();
    add(&n, sizeof n);
    if (!v.empty()) add(v.data(), v.size() * sizeof(T));
  }
  void add_string(const std::string& s) {
    const std::uint64_t n = s.size();
    add(&n, sizeof n);
    add(s.data(), s.size());
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string dataset_digest(const VariantDataset& ds, const MetaDesign& md) {
  Fnv1a f;
  f.add_vector(ds.row_ptr);
  f.add_vector(ds.col_idx);
  f.add_vector(ds.labels);
  for (const auto& s : ds.variant_ids) f.add_string(s);
  for (const auto& s : ds.class_names) f.add_string(s);
  for (const auto& s : ds.tumor_ids) f.add_string(s);
  f.add_vector(md.category_of);
  for (const auto& s : md.category_names) f.add_string(s);
  return f.hex();
}

inline FitData prepare_fit_data(const VariantDataset& ds, const MetaDesign& md, int screen_cap) {
  ds.validate();
  if (ds.n_tumors < 2) throw DataError("need at least two tumors to fit");
  if (ds.n_classes < 2) throw DataError("need at least two classes to fit");
  FitData d;
  d.labels = ds.labels;
  d.burden.assign(ds.burden.begin(), ds.burden.end());
  d.n_classes = ds.n_classes;
  const ScreenReport screen = screen_variants(ds, screen_cap);
  d.residual = Eigen::MatrixXd::Zero(ds.n_tumors, static_cast<Eigen::Index>(screen.kept.size()));
  for (std::size_t j = 0; j < screen.kept.size(); ++j) {
    d.screened_variants.push_back(ds.variant_ids[screen.kept[j]]);
    for (int n = 0; n < ds.n_tumors; ++n) d.residual(n, static_cast<Eigen::Index>(j)) = md.Xnorm.coeff(n, screen.kept[j]);
  }
  d.sigma_obs = column_sd(d.residual);
  d.vnorm = md.Vnorm;
  d.counts = md.V;
  d.categories = md.category_names;
  d.classes = ds.class_names;
  d.tumors = ds.tumor_ids;
  d.source = md.source;
  d.n_variants = ds.n_variants;
  d.dropped_zero_burden = ds.dropped_zero_burden;
  d.digest = dataset_digest(ds, md);
  return d;
}

// One stored draw. Everything needed to rebuild unscaled beta0, theta and
// omega travels with the record.
struct ChainRecord {
  std::uint64_t iteration = 0;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd beta0_scaled;
  Eigen::MatrixXd theta_scaled;
  Eigen::MatrixXd Wtilde;
  Eigen::MatrixXd exposures;  // N x S, empty when not stored
  double lambda_sq = 0.0;
  Eigen::VectorXd tau_sq;
  Eigen::VectorXd sigma_obs;
  Eigen::VectorXd sigma_topic;
  double acceptance = 1.0;

  friend bool operator==(const ChainRecord& a, const ChainRecord& b) {
    return a.iteration == b.iteration && a.alpha == b.alpha && a.beta0_scaled == b.beta0_scaled &&
           a.theta_scaled == b.theta_scaled && a.Wtilde == b.Wtilde && a.exposures == b.exposures &&
           a.lambda_sq == b.lambda_sq && a.tau_sq == b.tau_sq && a.sigma_obs == b.sigma_obs &&
           a.sigma_topic == b.sigma_topic && a.acceptance == b.acceptance;
  }
};

struct ChainStore {
  nlohmann::ordered_json manifest;
  std::vector<ChainRecord> records;
};

// Metropolis-within-Gibbs over both blocks. The data is held by reference so
// simulation-based tests can regenerate it between sweeps.
class GibbsSampler {
 public:
  GibbsSampler(const FitData& data, const FitConfig& cfg) : data_(data), cfg_(cfg) {
    cfg_.validate();
    threads_ = resolve_threads(cfg_.threads);
  }

  const FitConfig& config() const { return cfg_; }
  TopicState& topic() { return topic_; }
  const TopicState& topic() const { return topic_; }
  LogisticState& logistic() { return logistic_; }
  const LogisticState& logistic() const { return logistic_; }
  const Eigen::MatrixXd& design() const { return design_; }
  double last_acceptance() const { return acceptance_; }

  // Adopts externally supplied states (tests, resume). Rebuilds the design.
  void set_state(TopicState topic, LogisticState logistic, double acceptance = 1.0) {
    topic_ = std::move(topic);
    logistic_ = std::move(logistic);
    topic_.sigma_mode = cfg_.sigma_mode();
    acceptance_ = acceptance;
    if (logistic_.gamma_pg.rows() != data_.n_tumors())
      logistic_.gamma_pg = Eigen::MatrixXd::Zero(data_.n_tumors(), logistic_.n_classes());
    refresh_design();
  }

  // Approximate marginal posterior mode: group-lasso MAP on the standardized
  // (residual, Vnorm) predictors, KL-NMF of V, theta = W omega.
  void initialize() {
    const int n = data_.n_tumors(), k = data_.n_classes, j0 = data_.n_residual();
    const int p = data_.n_categories(), s = cfg_.topic.S;
    if (s > p && cfg_.design_path == TopicDesignPath::PseudoInverse)
      throw ConfigError("S must not exceed the number of categories P for the pseudo-inverse design");
    RngStream nmf_rng(cfg_.seed, StreamDomain::kInit, 1);
    const NmfResult nmf = nmf_kl(data_.counts.cast<double>(), s, nmf_rng, cfg_.init.nmf);
    TopicState topic = make_topic_state(nmf.H, nmf.W, cfg_.sigma_mode());
    topic.sigma_topic = compute_sigma_topic(topic, data_.burden, cfg_.topic.sigma_floor);

    LogisticState lg(k, j0, s, n);
    lg.sigma_obs = data_.sigma_obs;
    double lambda = 1.0;
    if (cfg_.init.map) {
      const Eigen::VectorXd sigma_v = column_sd(data_.vnorm);
      Eigen::MatrixXd x(n, j0 + p);
      x.leftCols(j0) = data_.residual * data_.sigma_obs.cwiseInverse().asDiagonal();
      x.rightCols(p) = data_.vnorm * sigma_v.cwiseInverse().asDiagonal();
      RngStream cv_rng(cfg_.seed, StreamDomain::kInit, 0);
      map_path_ = group_lasso_cv(x, data_.labels, k, cv_rng, cfg_.init.lasso);
      const Eigen::MatrixXd& coef = map_path_->fit.coef;
      lg.alpha = coef.row(0).transpose();
      lg.beta0_scaled = coef.middleRows(1, j0);
      const Eigen::MatrixXd omega = sigma_v.cwiseInverse().asDiagonal() * coef.bottomRows(p);
      const Eigen::MatrixXd theta = topic.normalized_W() * omega;
      lg.theta_scaled = topic.sigma_topic.asDiagonal() * theta;
      // The MAP objective averages the loss over tumors; the prior's
      // lambda is on the summed log-likelihood scale.
      lambda = static_cast<double>(n) * map_path_->fit.lambda;
    }
    const Eigen::MatrixXd delta = lg.delta();
    for (int l = 0; l < lg.n_groups(); ++l)
      lg.tau_sq(l) = std::max(delta.row(l).squaredNorm() / k, 1e-4);
    lg.lambda_sq = lambda * lambda;
    draw_Z(topic, data_.counts, z_streams(0), threads_);
    set_state(std::move(topic), std::move(lg));
  }

  // Sweep t (t >= 1): the topic block when t is a multiple of
  // topic_update_every, then the logistic block.
  void step(std::uint64_t t) {
    if (t % static_cast<std::uint64_t>(cfg_.topic_update_every) == 0) update_topics(t);
    draw_logistic_block(design_, data_.labels, logistic_, cfg_.logistic, cfg_.seed, t);
    logistic_.check_invariants();
  }

  void update_topics(std::uint64_t t) {
    draw_Z(topic_, data_.counts, z_streams(t), threads_);
    RngStream w_rng(cfg_.seed, StreamDomain::kTopicW, t);
    draw_W(topic_, cfg_.topic, w_rng);
    topic_.sigma_topic = compute_sigma_topic(topic_, data_.burden, cfg_.topic.sigma_floor);
    const Eigen::MatrixXd base = residual_predictors();
    SupervisedContext ctx{&base, &logistic_.theta_scaled, data_.burden, data_.labels};
    const std::uint64_t n = static_cast<std::uint64_t>(data_.n_tumors());
    const auto seed = cfg_.seed;
    const auto stats = sweep_H(
        topic_, cfg_.topic, ctx, [=](int row) { return RngStream(seed, StreamDomain::kTopicRow, t * n + row); },
        threads_);
    acceptance_ = stats.acceptance();
    topic_.sigma_topic = compute_sigma_topic(topic_, data_.burden, cfg_.topic.sigma_floor);
    refresh_design();
  }

  ChainRecord record(std::uint64_t t) const {
    ChainRecord r;
    r.iteration = t;
    r.alpha = logistic_.alpha;
    r.beta0_scaled = logistic_.beta0_scaled;
    r.theta_scaled = logistic_.theta_scaled;
    r.Wtilde = topic_.Wtilde;
    if (cfg_.store_exposures) r.exposures = topic_.exposures();
    r.lambda_sq = logistic_.lambda_sq;
    r.tau_sq = logistic_.tau_sq;
    r.sigma_obs = logistic_.sigma_obs;
    r.sigma_topic = topic_.sigma_topic;
    r.acceptance = acceptance_;
    return r;
  }

  const std::optional<GroupLassoPath>& map_path() const { return map_path_; }

  void refresh_design() { design_ = build_augmented_design(data_.design_inputs(), topic_, cfg_.design_path); }

 private:
  RowStreamFn z_streams(std::uint64_t t) const {
    const std::uint64_t n = static_cast<std::uint64_t>(data_.n_tumors());
    const auto seed = cfg_.seed;
    return [=](int row) { return RngStream(seed, StreamDomain::kTopicZ, t * n + row); };
  }

  // alpha_k + sum_j residual_nj / sigma_obs_j * beta0_jk.
  Eigen::MatrixXd residual_predictors() const {
    Eigen::MatrixXd base = data_.residual * data_.sigma_obs.cwiseInverse().asDiagonal() * logistic_.beta0_scaled;
    base.rowwise() += logistic_.alpha.transpose();
    return base;
  }

  const FitData& data_;
  FitConfig cfg_;
  unsigned threads_ = 1;
  TopicState topic_;
  LogisticState logistic_;
  Eigen::MatrixXd design_;
  double acceptance_ = 1.0;
  std::optional<GroupLassoPath> map_path_;
};

inline bool is_stored_iteration(const FitConfig& cfg, std::uint64_t t) {
  const auto burn = static_cast<std::uint64_t>(cfg.burn_in);
  return t > burn && (t - burn) % static_cast<std::uint64_t>(cfg.thin) == 0;
}

inline std::uint64_t total_sweeps(const FitConfig& cfg) {
  return cfg.iterations == 0 ? 0 : static_cast<std::uint64_t>(cfg.burn_in) + static_cast<std::uint64_t>(cfg.iterations);
}

inline nlohmann::ordered_json build_manifest(const FitData& data, const FitConfig& cfg,
                                             nlohmann::ordered_json config_echo = {}) {
  if (config_echo.is_null()) {
    RunConfig rc;
    rc.fit = cfg;
    config_echo = to_json(rc);
  }
  config_echo.erase("output");
  if (config_echo.contains("sampler")) config_echo["sampler"].erase("threads");
  const int n = data.n_tumors(), k = data.n_classes, j0 = data.n_residual();
  const int s = cfg.topic.S, p = data.n_categories();
  nlohmann::ordered_json m;
  m["format"] = "topical-gibbs-chain";
  m["format_version"] = 1;
  m["config"] = std::move(config_echo);
  m["data"] = {{"digest", data.digest},
               {"n_tumors", n},
               {"n_variants", data.n_variants},
               {"dropped_zero_burden", data.dropped_zero_burden}};
  m["dims"] = {{"N", n}, {"K", k}, {"J0", j0}, {"S", s}, {"P", p}, {"L", j0 + s}};
  m["screened_variants"] = data.screened_variants;
  m["source"] = data.source;
  m["categories"] = data.categories;
  m["classes"] = data.classes;
  m["tumors"] = data.tumors;
  m["stores_exposures"] = cfg.store_exposures;
  return m;
}

// Raised when a sweep fails; the checkpoint allows resuming at `iteration`.
class FitAborted : public NumericalError {
 public:
  FitAborted(std::uint64_t iteration, std::string checkpoint, const std::string& cause)
      : NumericalError("fit aborted at iteration " + std::to_string(iteration) + ": " + cause +
                       (checkpoint.empty() ? "" : " (checkpoint: " + checkpoint + ")")),
        iteration_(iteration),
        checkpoint_(std::move(checkpoint)) {}

  std::uint64_t iteration() const noexcept { return iteration_; }
  const std::string& checkpoint() const noexcept { return checkpoint_; }

 private:
  std::uint64_t iteration_;
  std::string checkpoint_;
};

}  // namespace topical_gibbs
