#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace topical_gibbs {

enum class SigmaMode {
  PerIteration,  // sigma_topic recomputed for every H proposal (Approximation 1 only)
  Frozen,        // sigma_topic held fixed during the H sweep (Approximations 1 + 2)
};

struct TopicHyper {
  double a_H = 1.0;
  double b_H = 1.0;
  double a_W = 0.5;
  double b_W = 0.5;
  int S = 50;
  int block_size = 0;  // 0: 10 when S >= 50, otherwise S
  int max_retries = 10;
  double target_acceptance = 0.9;
  double sigma_floor = 1e-8;

  static constexpr int kMaxRetriesCap = 25;

  int effective_block_size() const {
    if (block_size > 0) return std::min(block_size, S);
    return S >= 50 ? 10 : S;
  }

  void validate() const {
    if (!(a_H > 0 && b_H > 0 && a_W > 0 && b_W > 0)) throw ConfigError("topic hyperparameters must be positive");
    if (S < 1) throw ConfigError("number of topics S must be at least 1");
    if (block_size < 0 || block_size > S) throw ConfigError("block size must lie in [1, S]");
    if (max_retries < 1 || max_retries > kMaxRetriesCap)
      throw ConfigError("max_retries must lie in [1, " + std::to_string(kMaxRetriesCap) + "]");
    if (!(target_acceptance > 0 && target_acceptance <= 1)) throw ConfigError("target acceptance must lie in (0, 1]");
    if (!(sigma_floor > 0)) throw ConfigError("sigma floor must be positive");
  }
};

// Latent allocations Z_nsp, stored only for cells with V_np > 0, row-major
// by tumor. counts[c * S + s] is Z for cell c and topic s.
struct AllocationCells {
  int S = 0;
  std::vector<int> tumor;
  std::vector<int> category;
  std::vector<int> total;
  std::vector<int> counts;
  std::vector<std::int64_t> row_begin{0};

  std::size_t size() const { return tumor.size(); }
  std::span<const int> cell(std::size_t c) const { return {counts.data() + c * S, static_cast<std::size_t>(S)}; }
};

struct TopicState {
  Eigen::MatrixXd Htilde;  // N x S, strictly positive
  Eigen::MatrixXd Wtilde;  // S x P, strictly positive
  AllocationCells z;
  Eigen::VectorXd sigma_topic;  // S
  SigmaMode sigma_mode = SigmaMode::Frozen;
  Eigen::MatrixXd z_row_topic;       // N x S: sum_p Z_nsp
  Eigen::MatrixXd z_topic_category;  // S x P: sum_n Z_nsp

  int n_tumors() const { return static_cast<int>(Htilde.rows()); }
  int n_topics() const { return static_cast<int>(Htilde.cols()); }
  int n_categories() const { return static_cast<int>(Wtilde.cols()); }

  // D_W: row sums of Wtilde.
  Eigen::VectorXd topic_mass() const { return Wtilde.rowwise().sum(); }

  // W_sp = Wtilde_sp / sum_p' Wtilde_sp'.
  Eigen::MatrixXd normalized_W() const { return topic_mass().cwiseInverse().asDiagonal() * Wtilde; }

  // H = Htilde D_W, so that H_ns W_sp = Htilde_ns Wtilde_sp.
  Eigen::MatrixXd normalized_H() const { return Htilde * topic_mass().asDiagonal(); }

  // zeta_ns = H_ns / sum_s' H_ns'.
  Eigen::MatrixXd exposures() const {
    Eigen::MatrixXd h = normalized_H();
    return h.array().colwise() / h.rowwise().sum().array();
  }

  void check_invariants() const {
    if ((Htilde.array() <= 0.0).any() || !Htilde.allFinite()) throw NumericalError("Htilde must be strictly positive");
    if ((Wtilde.array() <= 0.0).any() || !Wtilde.allFinite()) throw NumericalError("Wtilde must be strictly positive");
  }
};

// State with given factors, unit sigma and empty allocations; call draw_Z
// before any conditional that reads Z.
inline TopicState make_topic_state(Eigen::MatrixXd htilde, Eigen::MatrixXd wtilde,
                                   SigmaMode mode = SigmaMode::Frozen) {
  if (htilde.cols() != wtilde.rows()) throw DomainError("make_topic_state: H and W disagree on S");
  TopicState st;
  st.Htilde = std::move(htilde);
  st.Wtilde = std::move(wtilde);
  st.z.S = st.n_topics();
  st.z.row_begin.assign(st.n_tumors() + 1, 0);
  st.sigma_topic = Eigen::VectorXd::Ones(st.n_topics());
  st.sigma_mode = mode;
  st.z_row_topic = Eigen::MatrixXd::Zero(st.n_tumors(), st.n_topics());
  st.z_topic_category = Eigen::MatrixXd::Zero(st.n_topics(), st.n_categories());
  st.check_invariants();
  return st;
}

using RowStreamFn = std::function<RngStream(int)>;

namespace detail {

inline void fill_allocation_row(TopicState& state, std::size_t c_begin, std::size_t c_end, RngStream& rng) {
  const int s_count = state.n_topics();
  std::vector<double> phi(s_count);
  for (std::size_t c = c_begin; c < c_end; ++c) {
    const int n = state.z.tumor[c];
    const int p = state.z.category[c];
    double sum = 0.0;
    for (int s = 0; s < s_count; ++s) sum += (phi[s] = state.Htilde(n, s) * state.Wtilde(s, p));
    for (double& v : phi) v /= sum;
    const auto draw = sample_multinomial(state.z.total[c], phi, rng);
    for (int s = 0; s < s_count; ++s) state.z.counts[c * s_count + s] = static_cast<int>(draw[s]);
  }
}

inline void rebuild_cells(TopicState& state, const Eigen::MatrixXi& v) {
  auto& z = state.z;
  z = AllocationCells{};
  z.S = state.n_topics();
  for (int n = 0; n < v.rows(); ++n) {
    for (int p = 0; p < v.cols(); ++p) {
      if (v(n, p) < 0) throw DomainError("draw_Z: negative count in V");
      if (v(n, p) == 0) continue;
      z.tumor.push_back(n);
      z.category.push_back(p);
      z.total.push_back(v(n, p));
    }
    z.row_begin.push_back(static_cast<std::int64_t>(z.tumor.size()));
  }
  z.counts.assign(z.size() * z.S, 0);
}

inline void refresh_allocation_sums(TopicState& state) {
  const int s_count = state.n_topics();
  state.z_row_topic = Eigen::MatrixXd::Zero(state.n_tumors(), s_count);
  state.z_topic_category = Eigen::MatrixXd::Zero(s_count, state.n_categories());
  for (std::size_t c = 0; c < state.z.size(); ++c) {
    const auto cell = state.z.cell(c);
    for (int s = 0; s < s_count; ++s) {
      state.z_row_topic(state.z.tumor[c], s) += cell[s];
      state.z_topic_category(s, state.z.category[c]) += cell[s];
    }
  }
}

}  // namespace detail

// Multinomial allocation of every nonzero V_np across topics with
// phi_s proportional to Htilde_ns Wtilde_sp. Row n draws from row_stream(n).
inline void draw_Z(TopicState& state, const Eigen::MatrixXi& v, const RowStreamFn& row_stream, unsigned threads = 1) {
  if (v.rows() != state.n_tumors() || v.cols() != state.n_categories())
    throw DomainError("draw_Z: V has the wrong shape");
  detail::rebuild_cells(state, v);
  parallel_for(static_cast<std::size_t>(state.n_tumors()), threads, [&](std::size_t n) {
    RngStream rng = row_stream(static_cast<int>(n));
    detail::fill_allocation_row(state, state.z.row_begin[n], state.z.row_begin[n + 1], rng);
  });
  detail::refresh_allocation_sums(state);
}

// Sequential variant drawing every cell from one stream.
inline void draw_Z(TopicState& state, const Eigen::MatrixXi& v, RngStream& rng) {
  if (v.rows() != state.n_tumors() || v.cols() != state.n_categories())
    throw DomainError("draw_Z: V has the wrong shape");
  detail::rebuild_cells(state, v);
  detail::fill_allocation_row(state, 0, state.z.size(), rng);
  detail::refresh_allocation_sums(state);
}

struct GammaParams {
  Eigen::MatrixXd shape;
  Eigen::MatrixXd rate;
};

// Full-conditional Gamma parameters of Wtilde:
// shape a_W + sum_n Z_nsp, rate b_W + sum_n Htilde_ns.
inline GammaParams w_conditional(const TopicState& state, const TopicHyper& hyper) {
  GammaParams g;
  g.shape = state.z_topic_category.array() + hyper.a_W;
  const Eigen::VectorXd rate = state.Htilde.colwise().sum().transpose().array() + hyper.b_W;
  g.rate = rate.replicate(1, state.n_categories());
  return g;
}

inline void draw_W(TopicState& state, const TopicHyper& hyper, RngStream& rng) {
  const GammaParams g = w_conditional(state, hyper);
  for (int s = 0; s < state.n_topics(); ++s)
    for (int p = 0; p < state.n_categories(); ++p) state.Wtilde(s, p) = sample_gamma(g.shape(s, p), g.rate(s, p), rng);
}

// Proposal Gamma parameters for row n of Htilde:
// shape a_H + sum_p Z_nsp, rate b_H + sum_p Wtilde_sp.
inline GammaParams h_proposal(const TopicState& state, const TopicHyper& hyper) {
  GammaParams g;
  g.shape = state.z_row_topic.array() + hyper.a_H;
  const Eigen::VectorXd rate = state.topic_mass().array() + hyper.b_H;
  g.rate = rate.transpose().replicate(state.n_tumors(), 1);
  return g;
}

// Sample sd (N - 1 denominator) of one column of Htilde / M.
inline double scaled_column_sd(const Eigen::Ref<const Eigen::VectorXd>& h, std::span<const double> burden) {
  const Eigen::Index n = h.size();
  double mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) mean += h(i) / burden[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = h(i) / burden[i] - mean;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(n - 1));
}

// sigma_topic_s = (sum_p Wtilde_sp) * sd_n(Htilde_ns / M_n), floored.
inline Eigen::VectorXd compute_sigma_topic(const Eigen::MatrixXd& htilde, const Eigen::MatrixXd& wtilde,
                                           std::span<const double> burden, double floor = 1e-8) {
  const Eigen::Index n = htilde.rows();
  if (n < 2) throw DomainError("compute_sigma_topic: need at least two tumors");
  if (static_cast<Eigen::Index>(burden.size()) != n) throw DomainError("compute_sigma_topic: burden size mismatch");
  const Eigen::VectorXd mass = wtilde.rowwise().sum();
  Eigen::VectorXd sigma(htilde.cols());
  for (Eigen::Index s = 0; s < htilde.cols(); ++s)
    sigma(s) = std::max(floor, mass(s) * scaled_column_sd(htilde.col(s), burden));
  return sigma;
}

inline Eigen::VectorXd compute_sigma_topic(const TopicState& state, std::span<const double> burden, double floor = 1e-8) {
  return compute_sigma_topic(state.Htilde, state.Wtilde, burden, floor);
}

// Supervised part of the H-row target: the multinomial-logistic terms with
// everything except the topic columns folded into `base`.
struct SupervisedContext {
  const Eigen::MatrixXd* base = nullptr;          // N x K: alpha_k + residual-variant terms
  const Eigen::MatrixXd* theta_scaled = nullptr;  // S x K
  std::span<const double> burden;
  std::span<const int> labels;

  bool active() const { return theta_scaled != nullptr && base != nullptr; }
};

inline double class_log_likelihood(const Eigen::Ref<const Eigen::RowVectorXd>& eta, int label) {
  const double m = eta.maxCoeff();
  return eta(label) - (m + std::log((eta.array() - m).exp().sum()));
}

// Log acceptance ratio of a frozen-sigma proposal for one tumor: the
// difference of its softmax log-likelihood at the proposed and current rows.
// The topic contribution to class k is sum_s h_s * D_W,s * theta_sk / (M_n sigma_s).
inline double frozen_log_ratio(const Eigen::Ref<const Eigen::RowVectorXd>& h_old,
                               const Eigen::Ref<const Eigen::RowVectorXd>& h_prop,
                               const Eigen::Ref<const Eigen::RowVectorXd>& base, const Eigen::VectorXd& mass,
                               const Eigen::VectorXd& sigma, double burden, const Eigen::MatrixXd& theta, int label) {
  const Eigen::RowVectorXd scale = (mass.array() / (burden * sigma.array())).transpose();
  const Eigen::RowVectorXd eta_old = base + h_old.cwiseProduct(scale) * theta;
  const Eigen::RowVectorXd eta_new = base + h_prop.cwiseProduct(scale) * theta;
  return class_log_likelihood(eta_new, label) - class_log_likelihood(eta_old, label);
}

struct RowUpdateStats {
  int blocks = 0;
  int accepted = 0;
  int proposals = 0;

  RowUpdateStats& operator+=(const RowUpdateStats& o) {
    blocks += o.blocks;
    accepted += o.accepted;
    proposals += o.proposals;
    return *this;
  }
  double acceptance() const { return blocks ? static_cast<double>(accepted) / blocks : 1.0; }
};

// Independence Metropolis updates of Htilde rows. Each row is split into a
// random partition of blocks; each block is proposed from its Gamma
// unsupervised conditional and accepted against the supervised terms, with
// fresh proposals on rejection up to max_retries.
//
// Frozen mode only involves tumor n's own softmax term, so rows are
// independent given sigma. PerIteration mode recomputes sigma from the
// proposed column, which moves every tumor's topic predictors; the ratio then
// runs over all tumors and rows must be visited sequentially.
class HRowUpdater {
 public:
  HRowUpdater(TopicState& state, const TopicHyper& hyper, const SupervisedContext& ctx)
      : state_(state), hyper_(hyper), ctx_(ctx), mass_(state.topic_mass()) {
    proposal_rate_ = mass_.array() + hyper.b_H;
    if (ctx_.active()) {
      const auto n = state.n_tumors();
      if (ctx_.base->rows() != n || ctx_.theta_scaled->rows() != state.n_topics() ||
          static_cast<Eigen::Index>(ctx_.burden.size()) != n || static_cast<Eigen::Index>(ctx_.labels.size()) != n)
        throw DomainError("HRowUpdater: supervised context has the wrong shape");
      if (state.sigma_mode == SigmaMode::PerIteration) {
        state_.sigma_topic = compute_sigma_topic(state_, ctx_.burden, hyper_.sigma_floor);
        design_ = topic_design();
        eta_ = *ctx_.base + design_ * *ctx_.theta_scaled;
      }
    }
  }

  RowUpdateStats update_row(int n, RngStream& rng) {
    const int s_count = state_.n_topics();
    std::vector<int> order(s_count);
    std::iota(order.begin(), order.end(), 0);
    for (int i = s_count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const int bs = hyper_.effective_block_size();
    RowUpdateStats stats;
    for (int start = 0; start < s_count; start += bs) {
      const std::span<const int> block(order.data() + start, std::min(bs, s_count - start));
      ++stats.blocks;
      for (int attempt = 0; attempt < hyper_.max_retries; ++attempt) {
        ++stats.proposals;
        Eigen::VectorXd prop(block.size());
        for (std::size_t b = 0; b < block.size(); ++b) {
          const int s = block[b];
          prop(b) = sample_gamma(hyper_.a_H + state_.z_row_topic(n, s), proposal_rate_(s), rng);
        }
        const double log_u = std::log(rng.uniform());
        if (try_block(n, block, prop, log_u)) {
          ++stats.accepted;
          break;
        }
      }
    }
    return stats;
  }

  // Log acceptance ratio of replacing row n's entries on `block` by `prop`.
  double log_ratio(int n, std::span<const int> block, const Eigen::VectorXd& prop) {
    if (!ctx_.active()) return 0.0;
    return state_.sigma_mode == SigmaMode::Frozen ? frozen_ratio(n, block, prop) : coupled_ratio(n, block, prop);
  }

 private:
  Eigen::MatrixXd topic_design() const {
    Eigen::MatrixXd x(state_.n_tumors(), state_.n_topics());
    for (int n = 0; n < x.rows(); ++n)
      for (int s = 0; s < x.cols(); ++s)
        x(n, s) = state_.Htilde(n, s) * mass_(s) / (ctx_.burden[n] * state_.sigma_topic(s));
    return x;
  }

  double frozen_ratio(int n, std::span<const int> block, const Eigen::VectorXd& prop) const {
    const Eigen::MatrixXd& theta = *ctx_.theta_scaled;
    Eigen::RowVectorXd eta = ctx_.base->row(n);
    for (int s = 0; s < state_.n_topics(); ++s)
      eta += state_.Htilde(n, s) * mass_(s) / (ctx_.burden[n] * state_.sigma_topic(s)) * theta.row(s);
    Eigen::RowVectorXd eta_new = eta;
    for (std::size_t b = 0; b < block.size(); ++b) {
      const int s = block[b];
      eta_new += (prop(b) - state_.Htilde(n, s)) * mass_(s) / (ctx_.burden[n] * state_.sigma_topic(s)) * theta.row(s);
    }
    return class_log_likelihood(eta_new, ctx_.labels[n]) - class_log_likelihood(eta, ctx_.labels[n]);
  }

  // Leaves the proposed design columns, sigma values and predictor shift in
  // the pending_* members so an accepted proposal can be committed.
  double coupled_ratio(int n, std::span<const int> block, const Eigen::VectorXd& prop) {
    const Eigen::MatrixXd& theta = *ctx_.theta_scaled;
    const int rows = state_.n_tumors();
    const auto width = static_cast<Eigen::Index>(block.size());
    pending_delta_ = Eigen::MatrixXd::Zero(rows, theta.cols());
    pending_cols_.resize(rows, width);
    pending_sigma_.resize(width);
    for (std::size_t b = 0; b < block.size(); ++b) {
      const int s = block[b];
      Eigen::VectorXd h = state_.Htilde.col(s);
      h(n) = prop(b);
      pending_sigma_(b) = std::max(hyper_.sigma_floor, mass_(s) * scaled_column_sd(h, ctx_.burden));
      for (int i = 0; i < rows; ++i) {
        pending_cols_(i, b) = h(i) * mass_(s) / (ctx_.burden[i] * pending_sigma_(b));
        pending_delta_.row(i) += (pending_cols_(i, b) - design_(i, s)) * theta.row(s);
      }
    }
    double log_r = 0.0;
    for (int i = 0; i < rows; ++i) {
      const Eigen::RowVectorXd eta_new = eta_.row(i) + pending_delta_.row(i);
      log_r += class_log_likelihood(eta_new, ctx_.labels[i]) - class_log_likelihood(eta_.row(i), ctx_.labels[i]);
    }
    return log_r;
  }

  bool try_block(int n, std::span<const int> block, const Eigen::VectorXd& prop, double log_u) {
    if (!ctx_.active()) {
      commit_row(n, block, prop);
      return true;
    }
    const bool frozen = state_.sigma_mode == SigmaMode::Frozen;
    const double log_r = frozen ? frozen_ratio(n, block, prop) : coupled_ratio(n, block, prop);
    if (!std::isfinite(log_r)) throw NumericalError("H-row Metropolis ratio is not finite");
    if (!(log_u < log_r)) return false;
    commit_row(n, block, prop);
    if (!frozen) {
      for (std::size_t b = 0; b < block.size(); ++b) {
        const int s = block[b];
        state_.sigma_topic(s) = pending_sigma_(b);
        design_.col(s) = pending_cols_.col(b);
      }
      eta_ += pending_delta_;
    }
    return true;
  }

  void commit_row(int n, std::span<const int> block, const Eigen::VectorXd& prop) {
    for (std::size_t b = 0; b < block.size(); ++b) state_.Htilde(n, block[b]) = prop(b);
  }

  TopicState& state_;
  const TopicHyper& hyper_;
  SupervisedContext ctx_;
  Eigen::VectorXd mass_;
  Eigen::VectorXd proposal_rate_;
  Eigen::MatrixXd design_;  // PerIteration: current topic columns
  Eigen::MatrixXd eta_;     // PerIteration: current linear predictors
  Eigen::MatrixXd pending_delta_;
  Eigen::MatrixXd pending_cols_;
  Eigen::VectorXd pending_sigma_;
};

inline RowUpdateStats mh_update_H_row(int n, TopicState& state, const TopicHyper& hyper, const SupervisedContext& ctx,
                                      RngStream& rng) {
  HRowUpdater updater(state, hyper, ctx);
  return updater.update_row(n, rng);
}

// One pass over all rows. Frozen mode runs rows in parallel; per-row streams
// make the result independent of the thread count.
inline RowUpdateStats sweep_H(TopicState& state, const TopicHyper& hyper, const SupervisedContext& ctx,
                              const RowStreamFn& row_stream, unsigned threads = 1) {
  HRowUpdater updater(state, hyper, ctx);
  const auto n = static_cast<std::size_t>(state.n_tumors());
  if (state.sigma_mode == SigmaMode::PerIteration && ctx.active()) threads = 1;
  std::vector<RowUpdateStats> per_row(n);
  parallel_for(n, threads, [&](std::size_t i) {
    RngStream rng = row_stream(static_cast<int>(i));
    per_row[i] = updater.update_row(static_cast<int>(i), rng);
  });
  RowUpdateStats total;
  for (const auto& r : per_row) total += r;
  state.check_invariants();
  return total;
}

}  // namespace topical_gibbs
