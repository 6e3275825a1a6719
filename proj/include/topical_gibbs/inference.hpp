#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "logistic_block.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "stats.hpp"

namespace topical_gibbs {

// Records that represent posterior draws: everything after initialization.
inline std::vector<const ChainRecord*> posterior_draws(const ChainStore& chain) {
  std::vector<const ChainRecord*> out;
  for (const auto& r : chain.records)
    if (r.iteration > 0) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------------------
// Topic identification

struct IdentifyOptions {
  int pca_dims = 50;
  int outlier_knn = 10;
  double outlier_quantile = 0.99;
  double outlier_cap = 0.10;
  int k_min = 2;
  int k_max = 0;  // 0: twice the number of topics per draw
  int restarts = 10;
  int max_kmeans_iterations = 300;
  std::size_t exact_knn_limit = 100000;
};

struct IdentifiedTopics {
  int k_star = 1;
  Eigen::MatrixXd centers;               // k* x P, rows on the simplex
  std::vector<std::uint64_t> iterations;  // one per posterior draw
  std::vector<std::vector<int>> labels;  // [draw][s]: cluster id, or -1 for outliers
  std::vector<int> k_values;             // scanned k
  std::vector<double> within_ss;         // within-cluster SS for each scanned k
  std::vector<int> cluster_sizes;
  int outliers = 0;
  double outlier_fraction = 0.0;
};

struct KMeansResult {
  Eigen::MatrixXd centers;
  std::vector<int> assignment;
  double within_ss = 0.0;
};

namespace detail {

inline double sq_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).squaredNorm();
}

// Type-7 sample quantile.
inline double quantile(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  const double h = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline KMeansResult kmeans_once(const Eigen::MatrixXd& x, int k, int max_iter, RngStream& rng) {
  const Eigen::Index n = x.rows();
  KMeansResult res;
  res.centers.resize(k, x.cols());
  // k-means++ seeding
  res.centers.row(0) = x.row(rng.below(static_cast<std::uint64_t>(n)));
  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = sq_dist(x.row(i), res.centers.row(0));
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (u < d2[pick]) break;
        u -= d2[pick];
      }
    }
    res.centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x.row(i), res.centers.row(c)));
  }

  res.assignment.assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(x.row(i), res.centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += x.row(i);
      ++counts[res.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centers.row(c) = sums.row(c) / counts[c];
  }
  res.within_ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) res.within_ss += sq_dist(x.row(i), res.centers.row(res.assignment[i]));
  return res;
}

// Mean distance to the knn nearest other rows. Exact up to `exact_limit`
// rows; above it, neighbours are searched within a fixed random reference
// subset of that size.
inline std::vector<double> knn_mean_distance(const Eigen::MatrixXd& x, int knn, std::size_t exact_limit,
                                             RngStream& rng, unsigned threads) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<int> reference(n);
  std::iota(reference.begin(), reference.end(), 0);
  if (n > exact_limit) {
    for (std::size_t i = 0; i < exact_limit; ++i) std::swap(reference[i], reference[i + rng.below(n - i)]);
    reference.resize(exact_limit);
  }
  const auto kk = static_cast<std::size_t>(std::min<std::size_t>(knn, reference.size() - 1));
  std::vector<double> out(n, 0.0);
  if (kk == 0) return out;
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> d;
    d.reserve(reference.size());
    for (int r : reference)
      if (static_cast<std::size_t>(r) != i) d.push_back(std::sqrt(sq_dist(x.row(i), x.row(r))));
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    out[i] = std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), 0.0) / static_cast<double>(kk);
  });
  return out;
}

// Projection onto the leading principal components of the centred rows.
inline Eigen::MatrixXd principal_scores(const Eigen::MatrixXd& x, int dims) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index p = x.cols();
  const Eigen::Index d = std::min<Eigen::Index>(dims, p);
  // eigenvalues ascend; take the last d columns
  return centred * eig.eigenvectors().rightCols(d);
}

}  // namespace detail

// Best of `restarts` k-means++ / Lloyd runs by within-cluster sum of squares.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, int restarts, int max_iter, RngStream& rng) {
  if (k < 1 || k > x.rows()) throw DomainError("kmeans: k must lie in [1, rows]");
  KMeansResult best;
  best.within_ss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult res = detail::kmeans_once(x, k, max_iter, rng);
    if (res.within_ss < best.within_ss) best = std::move(res);
  }
  return best;
}

// Elbow rule: the k in [k_min, k_max] with the largest second difference
// WSS(k-1) - 2 WSS(k) + WSS(k+1); ties go to the smaller k. `wss` is indexed
// from k = 1 and must reach k_max + 1.
inline int elbow_k(std::span<const double> wss, int k_min, int k_max) {
  int best = k_min;
  double best_d = -std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    const double d = wss[k - 2] - 2.0 * wss[k - 1] + wss[k];
    if (k == k_min || d > best_d + 1e-12 * std::max(1.0, std::abs(best_d))) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline IdentifiedTopics identify_topics(const ChainStore& chain, const IdentifyOptions& opt, RngStream& rng,
                                        unsigned threads = 1) {
  const auto draws = posterior_draws(chain);
  if (draws.size() < 2) throw ConfigError("identify_topics needs at least two stored posterior draws");
  const auto s = static_cast<int>(draws.front()->Wtilde.rows());
  const auto p = static_cast<int>(draws.front()->Wtilde.cols());
  if (s == 0) throw ConfigError("identify_topics: the chain has no topics");
  const int k_max = opt.k_max > 0 ? opt.k_max : 2 * s;
  const int k_min = std::max(2, opt.k_min);
  if (k_max < k_min) throw ConfigError("identify_topics: empty k range");

  const Eigen::Index pool = static_cast<Eigen::Index>(draws.size()) * s;
  if (pool < k_max + 1) throw ConfigError("identify_topics: pooled topic draws fewer than the k range");
  Eigen::MatrixXd rows(pool, p);
  for (std::size_t d = 0; d < draws.size(); ++d)
    for (int t = 0; t < s; ++t) {
      const Eigen::RowVectorXd w = draws[d]->Wtilde.row(t);
      rows.row(static_cast<Eigen::Index>(d) * s + t) = w / w.sum();
    }

  const int dims = static_cast<int>(std::min<Eigen::Index>({opt.pca_dims, p, pool}));
  const Eigen::MatrixXd scores = detail::principal_scores(rows, dims);

  // Outlier filter
  const auto knn_dist = detail::knn_mean_distance(scores, opt.outlier_knn, opt.exact_knn_limit, rng, threads);
  const double cut = detail::quantile(knn_dist, opt.outlier_quantile);
  std::vector<Eigen::Index> order(pool);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return knn_dist[a] > knn_dist[b]; });
  const auto cap = static_cast<Eigen::Index>(std::floor(opt.outlier_cap * static_cast<double>(pool)));
  std::vector<char> outlier(pool, 0);
  for (Eigen::Index i = 0; i < std::min(cap, pool); ++i)
    if (knn_dist[order[i]] > cut) outlier[order[i]] = 1;

  std::vector<Eigen::Index> inliers;
  for (Eigen::Index i = 0; i < pool; ++i)
    if (!outlier[i]) inliers.push_back(i);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(inliers.size()), dims);
  for (std::size_t i = 0; i < inliers.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = scores.row(inliers[i]);
  if (x.rows() < k_max + 1) throw ConfigError("identify_topics: too few inlying topic draws for the k range");

  IdentifiedTopics out;
  out.outliers = static_cast<int>(pool - x.rows());
  out.outlier_fraction = static_cast<double>(out.outliers) / static_cast<double>(pool);
  std::vector<double> wss(k_max + 1);
  std::vector<KMeansResult> fits(k_max + 1);
  for (int k = 1; k <= k_max + 1; ++k) {
    fits[k - 1] = kmeans(x, k, opt.restarts, opt.max_kmeans_iterations, rng);
    wss[k - 1] = fits[k - 1].within_ss;
    if (k >= k_min && k <= k_max) {
      out.k_values.push_back(k);
      out.within_ss.push_back(wss[k - 1]);
    }
  }
  const double total_scale = std::max(1.0, rows.squaredNorm());
  out.k_star = wss[0] <= 1e-12 * total_scale ? 1 : elbow_k(wss, k_min, k_max);
  const KMeansResult& fit = fits[out.k_star - 1];

  // Centers in the composition space, clusters ordered by size then index.
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(out.k_star, p);
  std::vector<int> counts(out.k_star, 0);
  for (std::size_t i = 0; i < inliers.size(); ++i) {
    sums.row(fit.assignment[i]) += rows.row(inliers[i]);
    ++counts[fit.assignment[i]];
  }
  std::vector<int> rank(out.k_star);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  std::vector<int> new_id(out.k_star);
  for (int r = 0; r < out.k_star; ++r) new_id[rank[r]] = r;
  out.centers.resize(out.k_star, p);
  out.cluster_sizes.assign(out.k_star, 0);
  for (int c = 0; c < out.k_star; ++c) {
    Eigen::RowVectorXd center = counts[c] > 0 ? Eigen::RowVectorXd(sums.row(c) / counts[c])
                                              : Eigen::RowVectorXd::Constant(p, 1.0 / p);
    out.centers.row(new_id[c]) = center / center.sum();
    out.cluster_sizes[new_id[c]] = counts[c];
  }

  out.labels.assign(draws.size(), std::vector<int>(s, -1));
  for (std::size_t i = 0; i < inliers.size(); ++i) {
    const auto idx = inliers[i];
    out.labels[idx / s][idx % s] = new_id[fit.assignment[i]];
  }
  for (const auto* r : draws) out.iterations.push_back(r->iteration);
  return out;
}

inline void write_centers_tsv(std::ostream& os, const IdentifiedTopics& id, const std::vector<std::string>& categories) {
  os << "cluster\tsize";
  for (const auto& c : categories) os << '\t' << c;
  os << '\n';
  os.precision(17);
  for (int c = 0; c < id.k_star; ++c) {
    os << c << '\t' << id.cluster_sizes[c];
    for (Eigen::Index p = 0; p < id.centers.cols(); ++p) os << '\t' << id.centers(c, p);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// De-scaling

struct Descaled {
  Eigen::MatrixXd beta0;  // J0 x K
  Eigen::MatrixXd theta;  // S x K
  Eigen::MatrixXd omega;  // P x K
  std::vector<bool> beta0_unstable;
  std::vector<bool> theta_unstable;
};

inline Descaled descale_coefficients(const ChainRecord& r, double floor = 1e-8) {
  Descaled d;
  const auto j0 = r.beta0_scaled.rows();
  const auto s = r.theta_scaled.rows();
  Eigen::VectorXd so(j0), st(s);
  d.beta0_unstable.assign(j0, false);
  d.theta_unstable.assign(s, false);
  for (Eigen::Index j = 0; j < j0; ++j) {
    d.beta0_unstable[j] = !(r.sigma_obs(j) >= floor);
    so(j) = d.beta0_unstable[j] ? floor : r.sigma_obs(j);
  }
  for (Eigen::Index t = 0; t < s; ++t) {
    d.theta_unstable[t] = !(r.sigma_topic(t) >= floor);
    st(t) = d.theta_unstable[t] ? floor : r.sigma_topic(t);
  }
  d.beta0 = so.cwiseInverse().asDiagonal() * r.beta0_scaled;
  d.theta = st.cwiseInverse().asDiagonal() * r.theta_scaled;
  d.omega = s > 0 ? Eigen::MatrixXd(normalized_pseudo_inverse(r.Wtilde) * d.theta)
                  : Eigen::MatrixXd::Zero(r.Wtilde.cols(), r.theta_scaled.cols());
  return d;
}

// Inverse of descale_coefficients on (beta0, theta).
inline void scale_coefficients(const Eigen::MatrixXd& beta0, const Eigen::MatrixXd& theta, ChainRecord& r) {
  r.beta0_scaled = r.sigma_obs.asDiagonal() * beta0;
  r.theta_scaled = r.sigma_topic.asDiagonal() * theta;
}

// ---------------------------------------------------------------------------
// Generalized odds

enum class OddsTarget { Variant, Category, TopicCluster };
enum class OddsScale { PerUnit, PerSD };

struct OddsQuery {
  std::vector<int> A;  // 0-based class indices
  std::vector<int> B;
  OddsTarget target = OddsTarget::TopicCluster;
  int index = 0;  // screened-variant index, category index or cluster id
  OddsScale scale = OddsScale::PerUnit;
  std::string label;
};

inline double generalized_log_odds(const Eigen::Ref<const Eigen::VectorXd>& coeff, std::span<const int> a,
                                   std::span<const int> b) {
  if (a.empty() || b.empty()) throw DomainError("generalized_log_odds: class sets must be non-empty");
  auto set_mean = [&](std::span<const int> set) {
    double sum = 0.0;
    for (int k : set) {
      if (k < 0 || k >= coeff.size()) throw DomainError("generalized_log_odds: class index out of range");
      sum += coeff(k);
    }
    return sum / static_cast<double>(set.size());
  };
  return set_mean(a) - set_mean(b);
}

inline double generalized_log_odds(const Eigen::Ref<const Eigen::VectorXd>& coeff, const OddsQuery& q) {
  return generalized_log_odds(coeff, q.A, q.B);
}

// Shortest window holding ceil(mass * T) sorted samples; leftmost on ties.
inline std::pair<double, double> hpd_interval(std::vector<double> samples, double mass = 0.8) {
  if (!(mass > 0.0 && mass < 1.0)) throw DomainError("hpd_interval: mass must lie in (0, 1)");
  if (samples.size() < 20) throw DomainError("hpd_interval: need at least 20 samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t t = samples.size();
  const auto m = std::min(t, static_cast<std::size_t>(std::ceil(mass * static_cast<double>(t) - 1e-9)));
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + m <= t; ++i) {
    const double w = samples[i + m - 1] - samples[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {samples[best], samples[best + m - 1]};
}

// ---------------------------------------------------------------------------
// Posterior summaries

struct SummaryRow {
  std::string query;
  std::size_t draws = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> flags;
};

struct SummaryContext {
  const IdentifiedTopics* identified = nullptr;
  Eigen::VectorXd category_sd;  // per-category SD of Vnorm, for PerSD category queries
  double hpd_mass = 0.8;
  std::size_t min_draws = 20;
};

inline std::string describe(const OddsQuery& q, const std::vector<std::string>& classes = {}) {
  if (!q.label.empty()) return q.label;
  auto set = [&](const std::vector<int>& s) {
    std::string out = "{";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += s[i] < static_cast<int>(classes.size()) ? classes[s[i]] : std::to_string(s[i]);
    }
    return out + "}";
  };
  const char* kind = q.target == OddsTarget::Variant ? "variant" : q.target == OddsTarget::Category ? "category" : "topic";
  return std::string(kind) + ":" + std::to_string(q.index) + " " + set(q.A) + "|" + set(q.B) +
         (q.scale == OddsScale::PerSD ? " per_sd" : "");
}

inline std::vector<SummaryRow> posterior_summary(const ChainStore& chain, const std::vector<OddsQuery>& queries,
                                                 const SummaryContext& ctx = {}) {
  const auto draws = posterior_draws(chain);
  if (draws.empty()) throw DomainError("posterior_summary: the chain has no posterior draws");
  std::vector<Descaled> descaled;
  descaled.reserve(draws.size());
  for (const auto* r : draws) descaled.push_back(descale_coefficients(*r));
  std::vector<std::string> classes;
  if (chain.manifest.contains("classes")) classes = chain.manifest["classes"].get<std::vector<std::string>>();

  std::vector<SummaryRow> out;
  for (const auto& q : queries) {
    SummaryRow row;
    row.query = describe(q, classes);
    std::vector<double> values;
    bool unstable = false;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      const ChainRecord& r = *draws[d];
      const Descaled& c = descaled[d];
      switch (q.target) {
        case OddsTarget::Variant: {
          if (q.index < 0 || q.index >= c.beta0.rows()) throw DomainError("query variant index out of range");
          unstable = unstable || c.beta0_unstable[q.index];
          const Eigen::VectorXd coef = q.scale == OddsScale::PerSD ? Eigen::VectorXd(r.beta0_scaled.row(q.index).transpose())
                                                                   : Eigen::VectorXd(c.beta0.row(q.index).transpose());
          values.push_back(generalized_log_odds(coef, q));
          break;
        }
        case OddsTarget::Category: {
          if (q.index < 0 || q.index >= c.omega.rows()) throw DomainError("query category index out of range");
          Eigen::VectorXd coef = c.omega.row(q.index).transpose();
          if (q.scale == OddsScale::PerSD) {
            if (ctx.category_sd.size() != c.omega.rows())
              throw ConfigError("per-SD category queries need the category standard deviations");
            coef *= ctx.category_sd(q.index);
          }
          values.push_back(generalized_log_odds(coef, q));
          break;
        }
        case OddsTarget::TopicCluster: {
          if (ctx.identified == nullptr) throw ConfigError("topic queries need identified topics");
          const auto& lab = ctx.identified->labels.at(d);
          for (std::size_t s = 0; s < lab.size(); ++s) {
            if (lab[s] != q.index) continue;
            unstable = unstable || c.theta_unstable[s];
            const Eigen::VectorXd coef = q.scale == OddsScale::PerSD ? Eigen::VectorXd(r.theta_scaled.row(s).transpose())
                                                                     : Eigen::VectorXd(c.theta.row(s).transpose());
            values.push_back(generalized_log_odds(coef, q));
          }
          break;
        }
      }
    }
    row.draws = values.size();
    if (!values.empty()) {
      row.mean = stats::mean(values);
      row.median = stats::median(values);
    }
    if (values.size() >= ctx.min_draws) {
      std::tie(row.lo, row.hi) = hpd_interval(values, ctx.hpd_mass);
    } else {
      row.flags.push_back("insufficient_samples");
    }
    if (unstable) row.flags.push_back("unstable_scale");
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_summary_tsv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "query\tdraws\tmean\tmedian\thpd_lo\thpd_hi\tflags\n";
  os.precision(10);
  for (const auto& r : rows) {
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ",") + f;
    os << r.query << '\t' << r.draws << '\t' << r.mean << '\t' << r.median << '\t' << r.lo << '\t' << r.hi << '\t'
       << (flags.empty() ? "." : flags) << '\n';
  }
}

inline nlohmann::ordered_json summary_json(const std::vector<SummaryRow>& rows) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    arr.push_back({{"query", r.query},
                   {"draws", r.draws},
                   {"mean", num(r.mean)},
                   {"median", num(r.median)},
                   {"hpd_lo", num(r.lo)},
                   {"hpd_hi", num(r.hi)},
                   {"flags", r.flags}});
  return arr;
}

}  // namespace topical_gibbs
