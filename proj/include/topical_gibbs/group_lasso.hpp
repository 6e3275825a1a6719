#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "error.hpp"
#include "logistic_block.hpp"
#include "rng.hpp"

namespace topical_gibbs {

struct GroupLassoOptions {
  int grid_size = 20;
  double min_ratio = 1e-3;  // smallest penalty relative to lambda_max
  int folds = 5;
  int max_iterations = 500;
  double tolerance = 1e-7;
};

// Penalized multinomial-logistic fit. coef is (1 + D) x K with the
// unpenalized intercepts in row 0; rows 1..D are the predictor groups.
struct GroupLassoFit {
  Eigen::MatrixXd coef;
  double lambda = 0.0;
  std::vector<double> objective;  // penalized objective per accepted iteration
  int iterations = 0;
};

struct GroupLassoPath {
  std::vector<double> lambdas;
  std::vector<double> cv_deviance;  // held-out deviance summed over folds
  int best = 0;
  GroupLassoFit fit;  // full-data fit at lambdas[best]
};

namespace detail {

inline Eigen::MatrixXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::MatrixXd& coef) {
  Eigen::MatrixXd eta = x * coef.bottomRows(coef.rows() - 1);
  eta.rowwise() += coef.row(0);
  return eta;
}

// Mean negative log-likelihood; fills prob with the softmax when given.
inline double multinomial_loss(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::MatrixXd& coef,
                               Eigen::MatrixXd* prob = nullptr) {
  const Eigen::MatrixXd eta = linear_predictor(x, coef);
  double loss = 0.0;
  Eigen::MatrixXd p(eta.rows(), eta.cols());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double m = eta.row(i).maxCoeff();
    p.row(i) = (eta.row(i).array() - m).exp();
    const double z = p.row(i).sum();
    p.row(i) /= z;
    loss -= eta(i, y[i]) - m - std::log(z);
  }
  if (prob) *prob = std::move(p);
  return loss / static_cast<double>(eta.rows());
}

inline Eigen::MatrixXd loss_gradient(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::MatrixXd& prob) {
  Eigen::MatrixXd r = prob;
  for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, y[i]) -= 1.0;
  r /= static_cast<double>(r.rows());
  Eigen::MatrixXd g(x.cols() + 1, r.cols());
  g.row(0) = r.colwise().sum();
  g.bottomRows(x.cols()) = x.transpose() * r;
  return g;
}

inline double group_penalty(const Eigen::MatrixXd& coef) {
  double s = 0.0;
  for (Eigen::Index g = 1; g < coef.rows(); ++g) s += coef.row(g).norm();
  return s;
}

inline Eigen::MatrixXd group_soft_threshold(Eigen::MatrixXd coef, double t) {
  for (Eigen::Index g = 1; g < coef.rows(); ++g) {
    const double norm = coef.row(g).norm();
    coef.row(g) *= norm > t ? 1.0 - t / norm : 0.0;
  }
  return coef;
}

inline Eigen::RowVectorXd smoothed_log_frequencies(std::span<const int> y, int k) {
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Constant(k, 0.5);
  for (int c : y) f(c) += 1.0;
  f = f.array().log();
  return f.array() - f.mean();
}

}  // namespace detail

// Largest penalty with a non-trivial solution: the largest group norm of the
// gradient at the intercept-only fit.
inline double group_lasso_lambda_max(const Eigen::MatrixXd& x, std::span<const int> y, int k) {
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(x.cols() + 1, k);
  coef.row(0) = detail::smoothed_log_frequencies(y, k);
  Eigen::MatrixXd prob;
  detail::multinomial_loss(x, y, coef, &prob);
  const Eigen::MatrixXd g = detail::loss_gradient(x, y, prob);
  double m = 0.0;
  for (Eigen::Index r = 1; r < g.rows(); ++r) m = std::max(m, g.row(r).norm());
  return std::max(m, 1e-12);
}

// Monotone FISTA with backtracking on mean loss + lambda * sum_g ||coef_g||.
inline GroupLassoFit fit_group_lasso(const Eigen::MatrixXd& x, std::span<const int> y, int k, double lambda,
                                     const GroupLassoOptions& opt = {}, const Eigen::MatrixXd* warm = nullptr) {
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw DomainError("fit_group_lasso: label count mismatch");
  GroupLassoFit fit;
  fit.lambda = lambda;
  Eigen::MatrixXd xk;
  if (warm) {
    xk = *warm;
  } else {
    xk = Eigen::MatrixXd::Zero(x.cols() + 1, k);
    xk.row(0) = detail::smoothed_log_frequencies(y, k);
  }
  auto objective = [&](const Eigen::MatrixXd& c) { return detail::multinomial_loss(x, y, c) + lambda * detail::group_penalty(c); };
  double f_x = objective(xk);
  fit.objective.push_back(f_x);
  Eigen::MatrixXd yk = xk;
  double t = 1.0;
  double lip = 1.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::MatrixXd prob;
    const double f_y = detail::multinomial_loss(x, y, yk, &prob);
    const Eigen::MatrixXd grad = detail::loss_gradient(x, y, prob);
    Eigen::MatrixXd z;
    for (int bt = 0; bt < 60; ++bt) {
      z = detail::group_soft_threshold(yk - grad / lip, lambda / lip);
      const Eigen::MatrixXd d = z - yk;
      if (detail::multinomial_loss(x, y, z) <= f_y + (grad.array() * d.array()).sum() + 0.5 * lip * d.squaredNorm() + 1e-15)
        break;
      lip *= 2.0;
    }
    const double f_z = objective(z);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const Eigen::MatrixXd x_prev = xk;
    const double f_prev = f_x;
    if (f_z <= f_x) {
      xk = z;
      f_x = f_z;
    }
    yk = xk + (t / t_next) * (z - xk) + ((t - 1.0) / t_next) * (xk - x_prev);
    t = t_next;
    lip = std::max(lip * 0.9, 1e-8);
    fit.objective.push_back(f_x);
    ++fit.iterations;
    if (f_z <= f_prev && f_prev - f_x <= opt.tolerance * std::max(1.0, std::abs(f_prev))) break;
  }
  fit.coef = std::move(xk);
  return fit;
}

inline std::vector<double> lambda_grid(double lambda_max, const GroupLassoOptions& opt) {
  std::vector<double> grid(opt.grid_size);
  for (int i = 0; i < opt.grid_size; ++i) {
    const double frac = opt.grid_size > 1 ? static_cast<double>(i) / (opt.grid_size - 1) : 0.0;
    grid[i] = lambda_max * std::pow(opt.min_ratio, frac);
  }
  return grid;
}

// Stratified fold labels: per class, a seeded shuffle then round-robin.
inline std::vector<int> stratified_fold_ids(std::span<const int> labels, int folds, RngStream& rng) {
  if (folds < 2) throw ConfigError("need at least two folds");
  int k = 0;
  for (int c : labels) k = std::max(k, c + 1);
  std::vector<int> fold(labels.size(), 0);
  int offset = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(static_cast<int>(i));
    for (int i = static_cast<int>(members.size()) - 1; i > 0; --i) std::swap(members[i], members[rng.below(i + 1)]);
    // Continue the round-robin where the previous class stopped so small
    // classes do not all pile into fold 0.
    for (std::size_t i = 0; i < members.size(); ++i) fold[members[i]] = static_cast<int>((offset + i) % folds);
    offset = static_cast<int>((offset + members.size()) % folds);
  }
  return fold;
}

// Penalty chosen by K-fold held-out deviance over a log grid, warm-started
// along the path, then refit on all rows at the chosen penalty.
inline GroupLassoPath group_lasso_cv(const Eigen::MatrixXd& x, std::span<const int> y, int k, RngStream& rng,
                                     const GroupLassoOptions& opt = {}) {
  GroupLassoPath path;
  path.lambdas = lambda_grid(group_lasso_lambda_max(x, y, k), opt);
  path.cv_deviance.assign(path.lambdas.size(), 0.0);
  const auto fold = stratified_fold_ids(y, opt.folds, rng);
  for (int f = 0; f < opt.folds; ++f) {
    std::vector<int> train, test;
    for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test : train).push_back(static_cast<int>(i));
    if (test.empty() || train.empty()) continue;
    Eigen::MatrixXd xtr(train.size(), x.cols()), xte(test.size(), x.cols());
    std::vector<int> ytr(train.size()), yte(test.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      xtr.row(i) = x.row(train[i]);
      ytr[i] = y[train[i]];
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      xte.row(i) = x.row(test[i]);
      yte[i] = y[test[i]];
    }
    Eigen::MatrixXd warm;
    for (std::size_t l = 0; l < path.lambdas.size(); ++l) {
      const auto fit = fit_group_lasso(xtr, ytr, k, path.lambdas[l], opt, l ? &warm : nullptr);
      warm = fit.coef;
      path.cv_deviance[l] += 2.0 * static_cast<double>(test.size()) * detail::multinomial_loss(xte, yte, fit.coef);
    }
  }
  path.best = static_cast<int>(std::min_element(path.cv_deviance.begin(), path.cv_deviance.end()) - path.cv_deviance.begin());
  Eigen::MatrixXd warm;
  for (int l = 0; l <= path.best; ++l) {
    path.fit = fit_group_lasso(x, y, k, path.lambdas[l], opt, l ? &warm : nullptr);
    warm = path.fit.coef;
  }
  return path;
}

}  // namespace topical_gibbs
