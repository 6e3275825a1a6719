#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "topic_block.hpp"

namespace topical_gibbs {

struct LogisticHyper {
  double tau0_alpha = 10.0;
  double a_lambda = 0.01;
  double b_lambda = 0.01;
  double zero_norm_threshold = 1e-12;

  void validate() const {
    if (!(tau0_alpha > 0 && a_lambda > 0 && b_lambda > 0 && zero_norm_threshold > 0))
      throw ConfigError("logistic hyperparameters must be positive");
  }
};

// Coefficients of the multinomial-logistic layer on the scaled design.
// delta stacks the residual rows (0..J0-1) above the topic rows (J0..L-1).
struct LogisticState {
  Eigen::VectorXd alpha;          // K
  Eigen::MatrixXd beta0_scaled;   // J0 x K
  Eigen::MatrixXd theta_scaled;   // S x K
  Eigen::VectorXd tau_sq;         // L = J0 + S
  double lambda_sq = 1.0;
  Eigen::VectorXd sigma_obs;      // J0
  Eigen::MatrixXd gamma_pg;       // N x K, last Polya-Gamma draws

  LogisticState() = default;
  LogisticState(int n_classes, int n_residual, int n_topics, int n_tumors = 0)
      : alpha(Eigen::VectorXd::Zero(n_classes)),
        beta0_scaled(Eigen::MatrixXd::Zero(n_residual, n_classes)),
        theta_scaled(Eigen::MatrixXd::Zero(n_topics, n_classes)),
        tau_sq(Eigen::VectorXd::Ones(n_residual + n_topics)),
        sigma_obs(Eigen::VectorXd::Ones(n_residual)),
        gamma_pg(Eigen::MatrixXd::Zero(n_tumors, n_classes)) {}

  int n_classes() const { return static_cast<int>(alpha.size()); }
  int n_residual() const { return static_cast<int>(beta0_scaled.rows()); }
  int n_topics() const { return static_cast<int>(theta_scaled.rows()); }
  int n_groups() const { return n_residual() + n_topics(); }

  Eigen::MatrixXd delta() const {
    Eigen::MatrixXd d(n_groups(), n_classes());
    d << beta0_scaled, theta_scaled;
    return d;
  }

  // (1 + L) x K matrix with the intercepts in row 0.
  Eigen::MatrixXd coefficients() const {
    Eigen::MatrixXd c(1 + n_groups(), n_classes());
    c << alpha.transpose(), beta0_scaled, theta_scaled;
    return c;
  }

  void set_class(int k, const Eigen::VectorXd& coef) {
    alpha(k) = coef(0);
    beta0_scaled.col(k) = coef.segment(1, n_residual());
    theta_scaled.col(k) = coef.tail(n_topics());
  }

  void check_invariants() const {
    if ((tau_sq.array() <= 0).any() || !(lambda_sq > 0) || (sigma_obs.array() <= 0).any())
      throw NumericalError("shrinkage parameters must be strictly positive");
  }
};

// Conditional law of 1/tau_l^2: inverse-Gaussian(mean, shape) when the group
// norm is positive; otherwise tau_l^2 ~ Gamma(1/2, lambda^2 / 2).
struct TauConditional {
  bool zero_group = false;
  double ig_mean = 0.0;
  double ig_shape = 0.0;
  double gamma_shape = 0.0;
  double gamma_rate = 0.0;
};

inline TauConditional tau_sq_conditional(double group_norm_sq, double lambda_sq, const LogisticHyper& hyper) {
  TauConditional c;
  if (std::sqrt(group_norm_sq) <= hyper.zero_norm_threshold) {
    c.zero_group = true;
    c.gamma_shape = 0.5;
    c.gamma_rate = 0.5 * lambda_sq;
  } else {
    c.ig_mean = std::sqrt(lambda_sq / group_norm_sq);
    c.ig_shape = lambda_sq;
  }
  return c;
}

inline void draw_tau_sq(LogisticState& state, const LogisticHyper& hyper, RngStream& rng) {
  const Eigen::MatrixXd d = state.delta();
  for (int l = 0; l < state.n_groups(); ++l) {
    const auto c = tau_sq_conditional(d.row(l).squaredNorm(), state.lambda_sq, hyper);
    state.tau_sq(l) = c.zero_group ? sample_gamma(c.gamma_shape, c.gamma_rate, rng)
                                   : 1.0 / sample_inverse_gaussian(c.ig_mean, c.ig_shape, rng);
  }
}

struct ShapeRate {
  double shape = 0.0;
  double rate = 0.0;
};

// lambda^2 | tau^2 ~ Gamma(a + L (K + 1) / 2, b + sum_l tau_l^2 / 2).
inline ShapeRate lambda_sq_conditional(const LogisticState& state, const LogisticHyper& hyper) {
  const double l = state.n_groups();
  const double k = state.n_classes();
  return {hyper.a_lambda + 0.5 * l * (k + 1.0), hyper.b_lambda + 0.5 * state.tau_sq.sum()};
}

inline void draw_lambda_sq(LogisticState& state, const LogisticHyper& hyper, RngStream& rng) {
  const auto c = lambda_sq_conditional(state, hyper);
  state.lambda_sq = sample_gamma(c.shape, c.rate, rng);
}

// ---------------------------------------------------------------------------
// Augmented design (1 | Xnorm_screened / sigma_obs | topic columns / sigma_topic).

enum class TopicDesignPath {
  PseudoInverse,  // Vnorm W^- / sigma_topic with W^- the right pseudo-inverse of normalized W
  PlugIn,         // Htilde_ns D_W,s / (M_n sigma_topic,s), the NMF plug-in
};

// Right pseudo-inverse of the normalized topic matrix,
// W^- = W^T (W W^T)^{-1} = Wtilde^T (Wtilde Wtilde^T)^{-1} D_W.
inline Eigen::MatrixXd normalized_pseudo_inverse(const Eigen::MatrixXd& wtilde) {
  const Eigen::MatrixXd gram = wtilde * wtilde.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  if (!(rcond > 1e-13) || !ldlt.isPositive()) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(wtilde);
    throw NumericalError("topic matrix W W^T is singular: rank " + std::to_string(lu.rank()) + " < S = " +
                         std::to_string(wtilde.rows()));
  }
  const Eigen::VectorXd mass = wtilde.rowwise().sum();
  return wtilde.transpose() * ldlt.solve(Eigen::MatrixXd(mass.asDiagonal()));
}

struct DesignInputs {
  const Eigen::MatrixXd* residual = nullptr;  // N x J0, screened Xnorm columns
  const Eigen::VectorXd* sigma_obs = nullptr; // J0
  const Eigen::MatrixXd* vnorm = nullptr;     // N x P
  std::span<const double> burden;             // N
};

inline Eigen::MatrixXd build_augmented_design(const DesignInputs& in, const TopicState& topic,
                                              TopicDesignPath path = TopicDesignPath::PseudoInverse) {
  const Eigen::Index n = in.residual->rows();
  const Eigen::Index j0 = in.residual->cols();
  const Eigen::Index s = topic.n_topics();
  Eigen::MatrixXd x(n, 1 + j0 + s);
  x.col(0).setOnes();
  for (Eigen::Index j = 0; j < j0; ++j) x.col(1 + j) = in.residual->col(j) / (*in.sigma_obs)(j);
  if (s == 0) return x;
  if (path == TopicDesignPath::PseudoInverse) {
    const Eigen::MatrixXd w_minus = normalized_pseudo_inverse(topic.Wtilde);
    x.rightCols(s) = (*in.vnorm * w_minus) * topic.sigma_topic.cwiseInverse().asDiagonal();
  } else {
    const Eigen::VectorXd mass = topic.topic_mass();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < s; ++t)
        x(i, 1 + j0 + t) = topic.Htilde(i, t) * mass(t) / (in.burden[i] * topic.sigma_topic(t));
  }
  return x;
}

// sigma_obs_j: sample sd (N - 1) of each screened normalized column, floored.
inline Eigen::VectorXd column_sd(const Eigen::MatrixXd& x, double floor = 1e-8) {
  Eigen::VectorXd sd(x.cols());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).mean();
    const double var = n > 1 ? (x.col(j).array() - m).square().sum() / (n - 1.0) : 0.0;
    sd(j) = std::max(floor, std::sqrt(var));
  }
  return sd;
}

// ---------------------------------------------------------------------------
// Per-class Polya-Gamma step.

struct ClassConditional {
  Eigen::MatrixXd precision;  // B_k^{-1}
  Eigen::VectorXd shift;      // X^T (y_k - 1/2 + Gamma_k c_k)
};

// Offsets c_nk = log sum_{k' != k} exp(eta_nk'), computed stably.
inline Eigen::VectorXd other_class_offsets(const Eigen::MatrixXd& eta, int k) {
  Eigen::VectorXd c(eta.rows());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < eta.cols(); ++j)
      if (j != k) m = std::max(m, eta(i, j));
    double s = 0.0;
    for (Eigen::Index j = 0; j < eta.cols(); ++j)
      if (j != k) s += std::exp(eta(i, j) - m);
    c(i) = m + std::log(s);
  }
  return c;
}

inline ClassConditional class_conditional(int k, const Eigen::MatrixXd& design, std::span<const int> labels,
                                          const Eigen::VectorXd& gamma, const Eigen::VectorXd& offsets,
                                          const LogisticState& state, const LogisticHyper& hyper) {
  const Eigen::Index d = design.cols();
  ClassConditional out;
  out.precision = design.transpose() * gamma.asDiagonal() * design;
  out.precision(0, 0) += 1.0 / (hyper.tau0_alpha * hyper.tau0_alpha);
  for (Eigen::Index l = 1; l < d; ++l) out.precision(l, l) += 1.0 / state.tau_sq(l - 1);
  Eigen::VectorXd kappa(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    kappa(i) = (labels[i] == k ? 0.5 : -0.5) + gamma(i) * offsets(i);
  out.shift = design.transpose() * kappa;
  return out;
}

// Draws (alpha_k, delta_k) given the other classes: PG(1, eta_nk - c_nk)
// augmentation followed by the Gaussian conditional N(B_k shift, B_k).
inline void draw_class_coefficients(int k, const Eigen::MatrixXd& design, std::span<const int> labels,
                                    LogisticState& state, const LogisticHyper& hyper, RngStream& rng) {
  const Eigen::MatrixXd eta = design * state.coefficients();
  const Eigen::VectorXd offsets = other_class_offsets(eta, k);
  Eigen::VectorXd gamma(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i) gamma(i) = sample_polya_gamma(1, eta(i, k) - offsets(i), rng);
  if (state.gamma_pg.rows() == design.rows()) state.gamma_pg.col(k) = gamma;
  const auto cond = class_conditional(k, design, labels, gamma, offsets, state, hyper);
  state.set_class(k, sample_mvn_precision(cond.precision, cond.shift, rng));
}

// tau^2, lambda^2, then every class in order. Streams are keyed by iteration.
inline void draw_logistic_block(const Eigen::MatrixXd& design, std::span<const int> labels, LogisticState& state,
                                const LogisticHyper& hyper, std::uint64_t seed, std::uint64_t iteration) {
  RngStream shrink(seed, StreamDomain::kShrinkage, iteration);
  draw_tau_sq(state, hyper, shrink);
  draw_lambda_sq(state, hyper, shrink);
  const int k_count = state.n_classes();
  for (int k = 0; k < k_count; ++k) {
    RngStream rng(seed, StreamDomain::kLogistic, iteration * static_cast<std::uint64_t>(k_count) + k);
    draw_class_coefficients(k, design, labels, state, hyper, rng);
  }
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd p(eta.rows(), eta.cols());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double m = eta.row(i).maxCoeff();
    p.row(i) = (eta.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace topical_gibbs
