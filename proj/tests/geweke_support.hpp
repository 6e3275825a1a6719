#pragma once

// Geweke "getting it right" checks: draws from the joint prior-predictive
// (marginal-conditional simulator) are compared against the successive-
// conditional simulator that alternates one sampler transition with a fresh
// data draw. Every compared statistic must agree by a two-sample KS test whose
// sample sizes are deflated to effective sizes for the autocorrelated chain.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "topical_gibbs/fit.hpp"
#include "topical_gibbs/stats.hpp"

namespace geweke {

using namespace topical_gibbs;

struct Comparison {
  std::string name;
  double p_value = 0.0;
  double statistic = 0.0;
  double n_eff = 0.0;
};

using Stats = std::vector<double>;

inline std::vector<Comparison> compare(const std::vector<std::string>& names, const std::vector<Stats>& marginal,
                                       const std::vector<Stats>& successive) {
  std::vector<Comparison> out;
  for (std::size_t f = 0; f < names.size(); ++f) {
    std::vector<double> a, b;
    for (const auto& s : marginal) a.push_back(s[f]);
    for (const auto& s : successive) b.push_back(s[f]);
    const double ess = stats::effective_sample_size(b);
    const auto ks = stats::ks_two_sample(a, b, 0.0, ess);
    out.push_back({names[f], ks.p_value, ks.statistic, ess});
  }
  return out;
}

inline double poisson(double mean, RngStream& rng) {
  std::poisson_distribution<int> d(mean);
  return d(rng.engine());
}

inline int categorical(const Eigen::RowVectorXd& eta, RngStream& rng) {
  const Eigen::RowVectorXd p = softmax_rows(eta);
  double u = rng.uniform();
  for (Eigen::Index k = 0; k + 1 < p.size(); ++k) {
    if (u < p(k)) return static_cast<int>(k);
    u -= p(k);
  }
  return static_cast<int>(p.size() - 1);
}

// ---------------------------------------------------------------------------
// (a) Unsupervised topic block: H ~ Gamma(a_H, b_H), W ~ Gamma(a_W, b_W),
// V ~ Poisson(H W).

struct TopicModel {
  int n = 6, p = 4, s = 2;
  TopicHyper hyper;
  TopicModel() {
    hyper.S = s;
    hyper.max_retries = 1;
  }
};

inline Eigen::MatrixXi draw_counts(const Eigen::MatrixXd& rate, RngStream& rng) {
  Eigen::MatrixXi v(rate.rows(), rate.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<int>(poisson(rate.data()[i], rng));
  return v;
}

inline Eigen::MatrixXd gamma_matrix(int r, int c, double shape, double rate, RngStream& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sample_gamma(shape, rate, rng);
  return m;
}

inline Stats topic_stats(const TopicState& st) {
  return {st.Htilde(0, 0), st.Htilde(3, 1), st.Wtilde(0, 0), st.Wtilde(1, 3), std::log(st.Wtilde(0, 2)),
          st.Htilde.col(0).sum(), st.Wtilde.row(1).sum()};
}

inline std::vector<std::string> topic_stat_names() {
  return {"H[0,0]", "H[3,1]", "W[0,0]", "W[1,3]", "log W[0,2]", "sum H[,0]", "sum W[1,]"};
}

inline std::vector<Comparison> topic_block(int transitions, std::uint64_t seed) {
  TopicModel m;
  RngStream rng(seed, StreamDomain::kGeneric, 1);
  std::vector<Stats> marginal, successive;
  for (int i = 0; i < transitions; ++i) {
    auto st = make_topic_state(gamma_matrix(m.n, m.s, m.hyper.a_H, m.hyper.b_H, rng),
                               gamma_matrix(m.s, m.p, m.hyper.a_W, m.hyper.b_W, rng));
    marginal.push_back(topic_stats(st));
  }
  auto st = make_topic_state(gamma_matrix(m.n, m.s, m.hyper.a_H, m.hyper.b_H, rng),
                             gamma_matrix(m.s, m.p, m.hyper.a_W, m.hyper.b_W, rng));
  Eigen::MatrixXi v = draw_counts(st.Htilde * st.Wtilde, rng);
  const SupervisedContext none;
  for (int i = 0; i < transitions; ++i) {
    const auto t = static_cast<std::uint64_t>(i);
    draw_Z(st, v, [&](int row) { return RngStream(seed, StreamDomain::kTopicZ, t * m.n + row); });
    RngStream w_rng(seed, StreamDomain::kTopicW, t);
    draw_W(st, m.hyper, w_rng);
    sweep_H(st, m.hyper, none, [&](int row) { return RngStream(seed, StreamDomain::kTopicRow, t * m.n + row); });
    v = draw_counts(st.Htilde * st.Wtilde, rng);
    successive.push_back(topic_stats(st));
  }
  return compare(topic_stat_names(), marginal, successive);
}

// ---------------------------------------------------------------------------
// (b) Logistic block on a fixed design: lambda^2 ~ Gamma(a, b),
// tau_l^2 ~ Gamma((K + 1) / 2, lambda^2 / 2), delta_l ~ N(0, tau_l^2 I_K),
// alpha_k ~ N(0, tau0^2), c_n ~ softmax.

struct LogisticModel {
  int n = 10, j0 = 2, k = 3;
  LogisticHyper hyper;
  Eigen::MatrixXd design;
  LogisticModel() {
    hyper.tau0_alpha = 2.0;
    hyper.a_lambda = 4.0;
    hyper.b_lambda = 2.0;
    RngStream rng(99, 0);
    design.resize(n, 1 + j0);
    design.col(0).setOnes();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < j0; ++j) design(i, 1 + j) = rng.normal();
  }
};

inline void draw_logistic_prior(LogisticState& st, const LogisticHyper& h, RngStream& rng) {
  st.lambda_sq = sample_gamma(h.a_lambda, h.b_lambda, rng);
  const int k = st.n_classes();
  for (int l = 0; l < st.n_groups(); ++l) st.tau_sq(l) = sample_gamma(0.5 * (k + 1), 0.5 * st.lambda_sq, rng);
  for (int c = 0; c < k; ++c) {
    st.alpha(c) = h.tau0_alpha * rng.normal();
    for (int j = 0; j < st.n_residual(); ++j) st.beta0_scaled(j, c) = std::sqrt(st.tau_sq(j)) * rng.normal();
    for (int s = 0; s < st.n_topics(); ++s)
      st.theta_scaled(s, c) = std::sqrt(st.tau_sq(st.n_residual() + s)) * rng.normal();
  }
}

inline void draw_labels(const Eigen::MatrixXd& design, const LogisticState& st, std::vector<int>& labels,
                        RngStream& rng) {
  const Eigen::MatrixXd eta = design * st.coefficients();
  for (Eigen::Index i = 0; i < eta.rows(); ++i) labels[i] = categorical(eta.row(i), rng);
}

inline Stats logistic_stats(const LogisticState& st) {
  const Eigen::MatrixXd d = st.delta();
  return {st.alpha(0), st.alpha(0) - st.alpha(2), d(0, 0), d(1, 2), d(0, 1) * d(0, 1), std::log(st.lambda_sq),
          std::log(st.tau_sq(0)), std::log(st.tau_sq(1))};
}

inline std::vector<std::string> logistic_stat_names() {
  return {"alpha[0]", "alpha[0]-alpha[2]", "delta[0,0]", "delta[1,2]", "delta[0,1]^2", "log lambda^2",
          "log tau^2[0]", "log tau^2[1]"};
}

inline std::vector<Comparison> logistic_block(int transitions, std::uint64_t seed) {
  LogisticModel m;
  RngStream rng(seed, StreamDomain::kGeneric, 2);
  std::vector<Stats> marginal, successive;
  LogisticState st(m.k, m.j0, 0, m.n);
  for (int i = 0; i < transitions; ++i) {
    draw_logistic_prior(st, m.hyper, rng);
    marginal.push_back(logistic_stats(st));
  }
  std::vector<int> labels(m.n);
  draw_logistic_prior(st, m.hyper, rng);
  draw_labels(m.design, st, labels, rng);
  for (int i = 0; i < transitions; ++i) {
    draw_logistic_block(m.design, labels, st, m.hyper, seed, static_cast<std::uint64_t>(i));
    draw_labels(m.design, st, labels, rng);
    successive.push_back(logistic_stats(st));
  }
  return compare(logistic_stat_names(), marginal, successive);
}

// ---------------------------------------------------------------------------
// (c) Full loop, Approximation 1 only, plug-in topic design, J0 = 0. The
// burdens M are fixed constants; V ~ Poisson(H W); labels from the softmax
// of alpha + (H D_W / (M sigma)) theta.

struct FullModel {
  int n = 8, p = 4, s = 2, k = 2;
  FitConfig cfg;
  FitData data;
  FullModel() {
    cfg.topic.S = s;
    cfg.topic.block_size = s;
    cfg.topic.max_retries = 1;
    cfg.topic_update_every = 1;
    cfg.approximation = Approximation::A1Only;
    cfg.design_path = TopicDesignPath::PlugIn;
    cfg.threads = 1;
    cfg.logistic.tau0_alpha = 2.0;
    cfg.logistic.a_lambda = 4.0;
    cfg.logistic.b_lambda = 2.0;
    data.n_classes = k;
    data.labels.assign(n, 0);
    data.burden = {3, 5, 8, 4, 6, 2, 7, 5};
    data.residual = Eigen::MatrixXd::Zero(n, 0);
    data.sigma_obs = Eigen::VectorXd::Zero(0);
    data.vnorm = Eigen::MatrixXd::Constant(n, p, 1.0 / p);
    data.counts = Eigen::MatrixXi::Zero(n, p);
  }

  void draw_prior(GibbsSampler& sampler, RngStream& rng) const {
    auto topic = make_topic_state(gamma_matrix(n, s, cfg.topic.a_H, cfg.topic.b_H, rng),
                                  gamma_matrix(s, p, cfg.topic.a_W, cfg.topic.b_W, rng), cfg.sigma_mode());
    topic.sigma_topic = compute_sigma_topic(topic, data.burden, cfg.topic.sigma_floor);
    LogisticState lg(k, 0, s, n);
    draw_logistic_prior(lg, cfg.logistic, rng);
    sampler.set_state(std::move(topic), std::move(lg));
  }

  void draw_data(const GibbsSampler& sampler, FitData& d, RngStream& rng) const {
    d.counts = draw_counts(sampler.topic().Htilde * sampler.topic().Wtilde, rng);
    draw_labels(sampler.design(), sampler.logistic(), d.labels, rng);
  }
};

inline Stats full_stats(const GibbsSampler& s) {
  const auto& lg = s.logistic();
  const auto& tp = s.topic();
  return {std::log(lg.lambda_sq), std::log(lg.tau_sq(0)), lg.theta_scaled(0, 0), lg.theta_scaled(1, 1),
          lg.theta_scaled(0, 1) * lg.theta_scaled(0, 1), lg.alpha(0) - lg.alpha(1), tp.Htilde(0, 0),
          std::log(tp.Wtilde(1, 2))};
}

inline std::vector<std::string> full_stat_names() {
  return {"log lambda^2", "log tau^2[0]", "theta[0,0]", "theta[1,1]", "theta[0,1]^2", "alpha[0]-alpha[1]",
          "H[0,0]", "log W[1,2]"};
}

inline std::vector<Comparison> full_loop(int transitions, std::uint64_t seed) {
  FullModel m;
  m.cfg.seed = seed;
  RngStream rng(seed, StreamDomain::kGeneric, 3);
  std::vector<Stats> marginal, successive;
  {
    FitData scratch = m.data;
    GibbsSampler s(scratch, m.cfg);
    for (int i = 0; i < transitions; ++i) {
      m.draw_prior(s, rng);
      marginal.push_back(full_stats(s));
    }
  }
  FitData data = m.data;
  GibbsSampler s(data, m.cfg);
  m.draw_prior(s, rng);
  m.draw_data(s, data, rng);
  for (int i = 1; i <= transitions; ++i) {
    s.step(static_cast<std::uint64_t>(i));
    m.draw_data(s, data, rng);
    successive.push_back(full_stats(s));
  }
  return compare(full_stat_names(), marginal, successive);
}

}  // namespace geweke
