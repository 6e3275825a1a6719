#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "fit.hpp"
#include "genome_data.hpp"
#include "group_lasso.hpp"
#include "inference.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace topical_gibbs {

// ---------------------------------------------------------------------------
// Prediction

// Test tumors expressed in the training coordinates: burden-normalized
// indicators of the screened variants and burden-normalized category counts
// over the training categories. Variants outside the screened set contribute
// only through their category.
struct TestDesign {
  Eigen::MatrixXd residual;  // N x J0
  Eigen::MatrixXd vnorm;     // N x P
  std::vector<std::string> tumor_ids;
};

inline TestDesign build_test_design(const VariantDataset& ds, const MetaMap& map,
                                    const std::vector<std::string>& categories,
                                    const std::vector<std::string>& screened) {
  std::unordered_map<std::string, int> cat_index, screen_index;
  for (std::size_t p = 0; p < categories.size(); ++p) cat_index.emplace(categories[p], static_cast<int>(p));
  for (std::size_t j = 0; j < screened.size(); ++j) screen_index.emplace(screened[j], static_cast<int>(j));

  std::vector<int> cat_of(ds.n_variants, -1), screen_of(ds.n_variants, -1);
  std::vector<std::string> missing, unknown_category;
  for (int v = 0; v < ds.n_variants; ++v) {
    const auto& id = ds.variant_ids[v];
    const auto it = map.category_of_variant.find(id);
    if (it == map.category_of_variant.end()) {
      missing.push_back(id);
      continue;
    }
    const auto cit = cat_index.find(map.categories[it->second]);
    if (cit == cat_index.end()) {
      unknown_category.push_back(id + " (" + map.categories[it->second] + ")");
      continue;
    }
    cat_of[v] = cit->second;
    if (const auto sit = screen_index.find(id); sit != screen_index.end()) screen_of[v] = sit->second;
  }
  if (!missing.empty()) throw DataError("test variants missing from map: " + format_missing(missing));
  if (!unknown_category.empty())
    throw DataError("test variants map to categories unseen in training: " + format_missing(unknown_category));

  TestDesign out;
  out.tumor_ids = ds.tumor_ids;
  out.residual = Eigen::MatrixXd::Zero(ds.n_tumors, static_cast<Eigen::Index>(screened.size()));
  out.vnorm = Eigen::MatrixXd::Zero(ds.n_tumors, static_cast<Eigen::Index>(categories.size()));
  for (int n = 0; n < ds.n_tumors; ++n) {
    const double inv_m = 1.0 / ds.burden[n];
    for (int v : ds.row(n)) {
      out.vnorm(n, cat_of[v]) += inv_m;
      if (screen_of[v] >= 0) out.residual(n, screen_of[v]) = inv_m;
    }
  }
  return out;
}

inline TestDesign build_test_design(const VariantDataset& ds, const MetaMap& map, const nlohmann::ordered_json& manifest) {
  return build_test_design(ds, map, manifest.at("categories").get<std::vector<std::string>>(),
                           manifest.at("screened_variants").get<std::vector<std::string>>());
}

struct PredictionMatrix {
  Eigen::MatrixXd probs;  // N x K
  std::vector<std::string> tumor_ids;
  std::vector<std::string> class_names;
};

// Linear predictor of one draw: alpha + residual beta0 + vnorm omega.
inline Eigen::MatrixXd draw_linear_predictor(const ChainRecord& r, const TestDesign& x) {
  const Descaled d = descale_coefficients(r);
  Eigen::MatrixXd eta = x.vnorm * d.omega;
  if (d.beta0.rows() > 0) eta += x.residual * d.beta0;
  eta.rowwise() += r.alpha.transpose();
  return eta;
}

// Posterior predictive class probabilities: the softmax of every posterior
// draw, averaged. A chain holding only its initial record predicts from it.
inline PredictionMatrix predict(const ChainStore& chain, const TestDesign& x) {
  auto draws = posterior_draws(chain);
  if (draws.empty())
    for (const auto& r : chain.records) draws.push_back(&r);
  if (draws.empty()) throw DomainError("predict: the chain has no records");
  PredictionMatrix out;
  out.tumor_ids = x.tumor_ids;
  if (chain.manifest.contains("classes")) out.class_names = chain.manifest["classes"].get<std::vector<std::string>>();
  const auto k = draws.front()->alpha.size();
  out.probs = Eigen::MatrixXd::Zero(x.vnorm.rows(), k);
  for (const auto* r : draws) out.probs += softmax_rows(draw_linear_predictor(*r, x));
  out.probs /= static_cast<double>(draws.size());
  for (Eigen::Index i = 0; i < out.probs.rows(); ++i) out.probs.row(i) /= out.probs.row(i).sum();
  return out;
}

inline void write_predictions_tsv(std::ostream& os, const PredictionMatrix& pm) {
  os << "tumor_id";
  for (Eigen::Index k = 0; k < pm.probs.cols(); ++k)
    os << '\t' << (k < static_cast<Eigen::Index>(pm.class_names.size()) ? pm.class_names[k] : "class_" + std::to_string(k + 1));
  os << '\n';
  os.precision(17);
  for (Eigen::Index i = 0; i < pm.probs.rows(); ++i) {
    os << pm.tumor_ids[i];
    for (Eigen::Index k = 0; k < pm.probs.cols(); ++k) os << '\t' << pm.probs(i, k);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Precision-recall

struct PRCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  double auc = 0.0;
  double prevalence = 0.0;
};

// Average precision over descending scores, one step per block of tied
// scores.
inline PRCurve pr_auc(std::span<const double> scores, std::span<const char> positives) {
  if (scores.size() != positives.size()) throw DomainError("pr_auc: length mismatch");
  const auto n = scores.size();
  std::size_t n_pos = 0;
  for (char p : positives) n_pos += p ? 1 : 0;
  if (n_pos == 0 || n_pos == n) throw DomainError("pr_auc: need both positives and negatives");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PRCurve c;
  c.prevalence = static_cast<double>(n_pos) / static_cast<double>(n);
  double tp = 0, fp = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (positives[order[j]] ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / static_cast<double>(n_pos);
    const double precision = tp / (tp + fp);
    c.recall.push_back(recall);
    c.precision.push_back(precision);
    c.auc += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Folds and cross-validation

struct FoldAssignment {
  std::vector<int> fold;            // per tumor
  std::vector<int> small_classes;   // classes with fewer members than folds
};

inline FoldAssignment stratified_folds(std::span<const int> labels, int folds, RngStream& rng) {
  FoldAssignment fa;
  fa.fold = stratified_fold_ids(labels, folds, rng);
  std::vector<int> count;
  for (int c : labels) {
    if (c >= static_cast<int>(count.size())) count.resize(c + 1, 0);
    ++count[c];
  }
  for (std::size_t c = 0; c < count.size(); ++c)
    if (count[c] > 0 && count[c] < folds) fa.small_classes.push_back(static_cast<int>(c));
  return fa;
}

struct CvOptions {
  int folds = 10;
  int replications = 1;
  unsigned jobs = 1;
  std::function<void(int, int, const std::string&)> on_fold_error;  // (replication, fold, message)
};

struct CvReplication {
  Eigen::MatrixXd probs;              // pooled held-out predictions, NaN rows for failed folds
  std::vector<int> failed_folds;
  std::vector<std::string> errors;
  std::vector<double> class_auc;      // NaN when a class has no held-out positives or negatives
  std::vector<double> prevalence;
  double macro_auc = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> small_classes;
};

struct CvResult {
  std::vector<std::string> class_names;
  std::vector<CvReplication> replications;
  std::vector<double> class_auc_mean, class_auc_sd;
  double macro_mean = std::numeric_limits<double>::quiet_NaN();
  double macro_sd = std::numeric_limits<double>::quiet_NaN();
};

inline std::uint64_t fold_seed(std::uint64_t seed, int replication, int fold, int folds) {
  RngStream s(seed, StreamDomain::kFolds, (std::uint64_t{1} << 40) + static_cast<std::uint64_t>(replication) * folds + fold);
  return s.next_u64();
}

namespace detail {

inline void score_replication(CvReplication& rep, std::span<const int> labels, int k) {
  rep.class_auc.assign(k, std::numeric_limits<double>::quiet_NaN());
  rep.prevalence.assign(k, std::numeric_limits<double>::quiet_NaN());
  std::vector<int> keep;
  for (Eigen::Index i = 0; i < rep.probs.rows(); ++i)
    if (rep.probs.row(i).allFinite()) keep.push_back(static_cast<int>(i));
  double sum = 0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> score;
    std::vector<char> pos;
    for (int i : keep) {
      score.push_back(rep.probs(i, c));
      pos.push_back(labels[i] == c);
    }
    const auto n_pos = std::count(pos.begin(), pos.end(), 1);
    if (n_pos == 0 || n_pos == static_cast<long>(pos.size())) continue;
    const PRCurve curve = pr_auc(score, pos);
    rep.class_auc[c] = curve.auc;
    rep.prevalence[c] = curve.prevalence;
    sum += curve.auc;
    ++used;
  }
  if (used > 0) rep.macro_auc = sum / used;
}

}  // namespace detail

// Stratified K-fold cross-validation. Each fold is fit on the remaining
// tumors (screening included) and predicted; held-out predictions are pooled
// per replication before computing one-vs-rest PR AUCs.
inline CvResult cross_validate(const VariantDataset& ds, const MetaMap& map, const FitConfig& cfg,
                               const CvOptions& opt = {}) {
  cfg.validate();
  if (opt.replications < 1) throw ConfigError("replications must be at least 1");
  const int k = ds.n_classes;
  CvResult result;
  result.class_names = ds.class_names;
  result.replications.resize(opt.replications);

  struct Task {
    int rep, fold;
  };
  std::vector<Task> tasks;
  std::vector<FoldAssignment> assignments;
  for (int r = 0; r < opt.replications; ++r) {
    RngStream rng(cfg.seed, StreamDomain::kFolds, static_cast<std::uint64_t>(r));
    assignments.push_back(stratified_folds(ds.labels, opt.folds, rng));
    auto& rep = result.replications[r];
    rep.probs = Eigen::MatrixXd::Constant(ds.n_tumors, k, std::numeric_limits<double>::quiet_NaN());
    rep.small_classes = assignments.back().small_classes;
    for (int f = 0; f < opt.folds; ++f) tasks.push_back({r, f});
  }

  const unsigned jobs = std::max(1u, resolve_threads(opt.jobs));
  std::mutex mu;
  parallel_for(tasks.size(), jobs, [&](std::size_t ti) {
    const auto [r, f] = tasks[ti];
    const auto& fold = assignments[r].fold;
    std::vector<int> train, test;
    for (int i = 0; i < ds.n_tumors; ++i) (fold[i] == f ? test : train).push_back(i);
    if (test.empty()) return;
    try {
      const VariantDataset train_ds = ds.subset(train);
      const VariantDataset test_ds = ds.subset(test);
      const FitData data = prepare_fit_data(train_ds, build_meta_design(train_ds, map), cfg.screen_cap);
      FitConfig fold_cfg = cfg;
      fold_cfg.seed = fold_seed(cfg.seed, r, f, opt.folds);
      fold_cfg.store_exposures = false;
      if (jobs > 1) fold_cfg.threads = 1;
      const ChainStore chain = fit(data, fold_cfg);
      const PredictionMatrix pm = predict(chain, build_test_design(test_ds, map, data.categories, data.screened_variants));
      std::lock_guard lock(mu);
      for (std::size_t i = 0; i < test.size(); ++i) result.replications[r].probs.row(test[i]) = pm.probs.row(i);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      result.replications[r].failed_folds.push_back(f);
      result.replications[r].errors.push_back("fold " + std::to_string(f) + ": " + e.what());
      if (opt.on_fold_error) opt.on_fold_error(r, f, e.what());
    }
  });

  for (auto& rep : result.replications) {
    std::sort(rep.failed_folds.begin(), rep.failed_folds.end());
    std::sort(rep.errors.begin(), rep.errors.end());
    detail::score_replication(rep, ds.labels, k);
  }
  auto mean_sd = [](const std::vector<double>& v, double& m, double& s) {
    std::vector<double> x;
    for (double a : v)
      if (std::isfinite(a)) x.push_back(a);
    m = x.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(x);
    s = x.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : stats::sd(x);
  };
  result.class_auc_mean.resize(k);
  result.class_auc_sd.resize(k);
  for (int c = 0; c < k; ++c) {
    std::vector<double> v;
    for (const auto& rep : result.replications) v.push_back(rep.class_auc[c]);
    mean_sd(v, result.class_auc_mean[c], result.class_auc_sd[c]);
  }
  std::vector<double> macro;
  for (const auto& rep : result.replications) macro.push_back(rep.macro_auc);
  mean_sd(macro, result.macro_mean, result.macro_sd);
  return result;
}

inline void write_cv_tsv(std::ostream& os, const CvResult& cv) {
  os << "replication\tfold_set\tclass\tpr_auc\tnull_baseline\n";
  os.precision(10);
  const auto k = cv.class_names.size();
  for (std::size_t r = 0; r < cv.replications.size(); ++r) {
    const auto& rep = cv.replications[r];
    std::string folds = "all";
    if (!rep.failed_folds.empty()) {
      folds = "incomplete(missing";
      for (int f : rep.failed_folds) folds += " " + std::to_string(f);
      folds += ")";
    }
    double prev_mean = 0;
    int used = 0;
    for (std::size_t c = 0; c < k; ++c) {
      os << r << '\t' << folds << '\t' << cv.class_names[c] << '\t' << rep.class_auc[c] << '\t' << rep.prevalence[c]
         << '\n';
      if (std::isfinite(rep.class_auc[c])) {
        prev_mean += rep.prevalence[c];
        ++used;
      }
    }
    os << r << '\t' << folds << "\tmacro\t" << rep.macro_auc << '\t' << (used ? prev_mean / used : NAN) << '\n';
  }
  for (std::size_t c = 0; c < k; ++c)
    os << "mean\tall\t" << cv.class_names[c] << '\t' << cv.class_auc_mean[c] << '\t' << "sd=" << cv.class_auc_sd[c]
       << '\n';
  os << "mean\tall\tmacro\t" << cv.macro_mean << "\tsd=" << cv.macro_sd << '\n';
}

// ---------------------------------------------------------------------------
// Auxiliary reports

struct SpearmanResult {
  double rho = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
};

inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t m = i; m < j; ++m) rank[order[m]] = r;
    i = j;
  }
  return rank;
}

// Spearman correlation (Pearson correlation of average ranks) over the finite
// pairs. A constant input yields an invalid result.
inline SpearmanResult correlation_report(std::span<const double> composition, std::span<const double> scores) {
  if (composition.size() != scores.size()) throw DomainError("correlation_report: length mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < composition.size(); ++i)
    if (std::isfinite(composition[i]) && std::isfinite(scores[i])) {
      a.push_back(composition[i]);
      b.push_back(scores[i]);
    }
  if (a.size() < 3) throw DomainError("correlation_report: need at least three finite pairs");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double ma = stats::mean(ra), mb = stats::mean(rb);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  SpearmanResult out;
  if (saa <= 0 || sbb <= 0) return out;
  out.rho = sab / std::sqrt(saa * sbb);
  out.valid = true;
  return out;
}

inline double tv_distance(const Eigen::Ref<const Eigen::VectorXd>& w1, const Eigen::Ref<const Eigen::VectorXd>& w2) {
  if (w1.size() != w2.size()) throw DomainError("tv_distance: length mismatch");
  if (std::abs(w1.sum() - 1.0) > 1e-8 || std::abs(w2.sum() - 1.0) > 1e-8 || w1.minCoeff() < 0 || w2.minCoeff() < 0)
    throw DomainError("tv_distance: inputs must be probability vectors");
  return total_variation(w1, w2);
}

}  // namespace topical_gibbs
