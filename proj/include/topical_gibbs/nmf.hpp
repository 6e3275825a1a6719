#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace topical_gibbs {

struct NmfOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;  // relative change of the KL objective
  double jitter = 1e-8;
};

struct NmfResult {
  Eigen::MatrixXd H;  // N x S
  Eigen::MatrixXd W;  // S x P
  std::vector<double> objective;
  int iterations = 0;
  bool jittered = false;
};

// Generalized KL divergence D(V || HW) = sum V log(V / HW) - V + HW.
inline double kl_divergence(const Eigen::MatrixXd& v, const Eigen::MatrixXd& approx) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = v.data()[i];
    const double y = approx.data()[i];
    d += (x > 0.0 ? x * std::log(x / y) : 0.0) - x + y;
  }
  return d;
}

namespace detail {

inline bool strictly_positive(const Eigen::MatrixXd& m) { return m.allFinite() && (m.array() > 0.0).all(); }

inline void kl_multiplicative_updates(const Eigen::MatrixXd& v, NmfResult& r, const NmfOptions& opt) {
  constexpr double tiny = 1e-300;
  double prev = kl_divergence(v, r.H * r.W);
  r.objective.push_back(prev);
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::MatrixXd ratio = v.array() / (r.H * r.W).array().max(tiny);
    r.H.array() *= (ratio * r.W.transpose()).array().rowwise() /
                   r.W.rowwise().sum().transpose().array().max(tiny);
    ratio = v.array() / (r.H * r.W).array().max(tiny);
    r.W.array() *= (r.H.transpose() * ratio).array().colwise() / r.H.colwise().sum().transpose().array().max(tiny);
    const double cur = kl_divergence(v, r.H * r.W);
    r.objective.push_back(cur);
    ++r.iterations;
    if (std::abs(prev - cur) <= opt.tolerance * std::max(1.0, std::abs(prev))) break;
    prev = cur;
  }
}

}  // namespace detail

// Poisson NMF V ~ HW via Lee-Seung multiplicative updates from a random
// positive start. Zero or non-finite factor entries trigger one jittered
// restart from the current factors.
inline NmfResult nmf_kl(const Eigen::MatrixXd& v, int s, RngStream& rng, const NmfOptions& opt = {}) {
  if (s < 1) throw DomainError("nmf_kl: rank must be at least 1");
  if ((v.array() < 0.0).any()) throw DomainError("nmf_kl: V must be non-negative");
  const double scale = std::sqrt(std::max(v.mean(), 1e-12) / s);
  NmfResult r;
  r.H.resize(v.rows(), s);
  r.W.resize(s, v.cols());
  for (Eigen::Index i = 0; i < r.H.size(); ++i) r.H.data()[i] = scale * (0.5 + rng.uniform());
  for (Eigen::Index i = 0; i < r.W.size(); ++i) r.W.data()[i] = scale * (0.5 + rng.uniform());
  detail::kl_multiplicative_updates(v, r, opt);
  if (!detail::strictly_positive(r.H) || !detail::strictly_positive(r.W)) {
    r.jittered = true;
    r.H = r.H.array().isFinite().select(r.H, 0.0).array() + opt.jitter;
    r.W = r.W.array().isFinite().select(r.W, 0.0).array() + opt.jitter;
    detail::kl_multiplicative_updates(v, r, opt);
    r.H.array() = r.H.array().max(opt.jitter);
    r.W.array() = r.W.array().max(opt.jitter);
    if (!detail::strictly_positive(r.H) || !detail::strictly_positive(r.W))
      throw NumericalError("NMF failed to produce strictly positive factors");
  }
  return r;
}

}  // namespace topical_gibbs
