#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace topical_gibbs {

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline void require_positive(double value, const char* name, const char* fn) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw DomainError(std::string(fn) + ": " + name + " must be positive and finite, got " +
                      std::to_string(value));
  }
}

}  // namespace detail

// Gamma(shape, rate), mean shape/rate. Marsaglia-Tsang squeeze; shapes below
// one are boosted through Gamma(shape + 1) * U^(1/shape).
inline double sample_gamma(double shape, double rate, RngStream& rng) {
  detail::require_positive(shape, "shape", "sample_gamma");
  detail::require_positive(rate, "rate", "sample_gamma");
  double boost = 1.0;
  double a = shape;
  if (a < 1.0) {
    boost = std::pow(rng.uniform(), 1.0 / a);
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2 || std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return boost * d * v / rate;
    }
  }
}

// Inverse-Gaussian(mean, shape) by the Michael-Schucany-Haas transformation.
// The smaller root is written as mean / (1 + r + sqrt(r^2 + 2r)) which stays
// accurate when mean * y / shape is large.
inline double sample_inverse_gaussian(double mean, double shape, RngStream& rng) {
  detail::require_positive(mean, "mean", "sample_inverse_gaussian");
  detail::require_positive(shape, "shape", "sample_inverse_gaussian");
  const double z = rng.normal();
  const double r = mean * z * z / (2.0 * shape);
  const double x = mean / (1.0 + r + std::sqrt(r * r + 2.0 * r));
  if (rng.uniform() <= mean / (mean + x)) return x;
  return mean * mean / x;
}

namespace detail {

// Truncation point of the Devroye / Polson-Scott-Windle mixture.
inline constexpr double kPgTrunc = 0.64;

// Piecewise coefficient a_n(x) of the alternating series for J*(1, z).
inline double pg_series_coef(int n, double x) {
  const double k = n + 0.5;
  if (x > kPgTrunc) {
    return std::numbers::pi * k * std::exp(-0.5 * k * k * std::numbers::pi * std::numbers::pi * x);
  }
  const double t = 2.0 / (std::numbers::pi * x);
  return std::numbers::pi * k * t * std::sqrt(t) * std::exp(-2.0 * k * k / x);
}

// P(IG(mu, 1) < t); mu = +inf gives the Levy limit.
inline double inverse_gaussian_cdf_unit_shape(double t, double mu) {
  const double r = std::sqrt(1.0 / t);
  if (!std::isfinite(mu)) return 2.0 * normal_cdf(-r);
  const double a = normal_cdf(r * (t / mu - 1.0));
  const double b = std::exp(2.0 / mu) * normal_cdf(-r * (t / mu + 1.0));
  return a + b;
}

// IG(1/z, 1) truncated to (0, t).
inline double truncated_inverse_gaussian(double z, double t, RngStream& rng) {
  const double mu = z > 0.0 ? 1.0 / z : std::numeric_limits<double>::infinity();
  double x = t + 1.0;
  if (mu > t) {
    // Proposal from the truncated Levy law (1/chi^2), then tilt by exp(-z^2 x / 2).
    for (;;) {
      double e1, e2;
      do {
        e1 = rng.exponential();
        e2 = rng.exponential();
      } while (e1 * e1 > 2.0 * e2 / t);
      x = 1.0 + e1 * t;
      x = t / (x * x);
      if (rng.uniform() <= std::exp(-0.5 * z * z * x)) return x;
    }
  }
  while (x >= t) {
    const double y = rng.normal();
    const double my = mu * y * y;
    x = mu + 0.5 * mu * my - 0.5 * mu * std::sqrt(4.0 * my + my * my);
    if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
  }
  return x;
}

}  // namespace detail

// Exact PG(1, c) draw: Devroye's alternating-series accept/reject for the
// exponentially tilted Jacobi law J*(1, |c|/2), returned as J*/4. c = 0 is
// the untilted law, reached continuously by the same code path.
inline double sample_polya_gamma(int b, double c, RngStream& rng) {
  if (b != 1) {
    throw DomainError("sample_polya_gamma: only b = 1 is supported, got b = " + std::to_string(b));
  }
  if (!std::isfinite(c)) throw DomainError("sample_polya_gamma: tilt must be finite");
  const double z = 0.5 * std::abs(c);
  const double t = detail::kPgTrunc;
  const double k = std::numbers::pi * std::numbers::pi / 8.0 + 0.5 * z * z;
  const double p = std::numbers::pi / (2.0 * k) * std::exp(-k * t);
  const double mu = z > 0.0 ? 1.0 / z : std::numeric_limits<double>::infinity();
  const double q = 2.0 * std::exp(-z) * detail::inverse_gaussian_cdf_unit_shape(t, mu);
  const double left_mass = p / (p + q);
  for (;;) {
    double x;
    if (rng.uniform() < left_mass) {
      x = t + rng.exponential() / k;
    } else {
      x = detail::truncated_inverse_gaussian(z, t, rng);
    }
    double s = detail::pg_series_coef(0, x);
    const double y = rng.uniform() * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= detail::pg_series_coef(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += detail::pg_series_coef(n, x);
        if (y > s) break;
      }
    }
  }
}

// Cholesky of a symmetric matrix that reports the first failing pivot.
inline Eigen::LLT<Eigen::MatrixXd> checked_cholesky(const Eigen::MatrixXd& precision) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() == Eigen::Success) return llt;
  // Re-run an unblocked factorization to locate the failing pivot.
  const Eigen::Index d = precision.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double diag = precision(j, j) - l.row(j).head(j).squaredNorm();
    if (!(diag > 0.0)) throw FactorizationError(j, "precision matrix is not positive definite");
    l(j, j) = std::sqrt(diag);
    for (Eigen::Index i = j + 1; i < d; ++i) {
      l(i, j) = (precision(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  throw FactorizationError(d - 1, "precision matrix is numerically not positive definite");
}

// Draw from N(Q^{-1} shift, Q^{-1}) using one Cholesky factor Q = L L^T:
// mean by two triangular solves, noise as L^{-T} z.
inline Eigen::VectorXd sample_mvn_precision(const Eigen::MatrixXd& precision,
                                            const Eigen::VectorXd& shift, RngStream& rng) {
  if (precision.rows() != precision.cols() || precision.rows() != shift.size()) {
    throw DomainError("sample_mvn_precision: dimension mismatch");
  }
  const auto llt = checked_cholesky(precision);
  Eigen::VectorXd mean = llt.solve(shift);
  Eigen::VectorXd z(shift.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + llt.matrixU().solve(z);
}

// Conditional-binomial multinomial sampler.
inline std::vector<std::int64_t> sample_multinomial(std::int64_t total, std::span<const double> probs,
                                                    RngStream& rng) {
  if (total < 0) throw DomainError("sample_multinomial: total must be non-negative");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0 || !std::isfinite(p)) throw DomainError("sample_multinomial: negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw DomainError("sample_multinomial: probabilities sum to " + std::to_string(sum));
  }
  std::vector<std::int64_t> counts(probs.size(), 0);
  std::int64_t remaining = total;
  double mass = 1.0;
  for (std::size_t i = 0; i + 1 < probs.size() && remaining > 0; ++i) {
    if (probs[i] <= 0.0) {
      mass -= probs[i];
      continue;
    }
    const double p = mass > 0.0 ? std::min(1.0, probs[i] / mass) : 1.0;
    std::binomial_distribution<std::int64_t> binom(remaining, p);
    counts[i] = binom(rng.engine());
    remaining -= counts[i];
    mass -= probs[i];
  }
  if (!probs.empty()) counts.back() += remaining;
  return counts;
}

inline Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& concentration, RngStream& rng) {
  Eigen::VectorXd g(concentration.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = sample_gamma(concentration(i), 1.0, rng);
  return g / g.sum();
}

}  // namespace topical_gibbs
