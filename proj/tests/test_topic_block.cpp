#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "topical_gibbs/stats.hpp"
#include "topical_gibbs/topic_block.hpp"

using namespace topical_gibbs;

namespace {

RowStreamFn streams(std::uint64_t seed, std::uint64_t iteration, int n_rows) {
  return [=](int n) { return RngStream(seed, StreamDomain::kTopicRow, iteration * n_rows + n); };
}

TopicState random_state(int n, int s, int p, RngStream& rng) {
  Eigen::MatrixXd h(n, s), w(s, p);
  for (int i = 0; i < h.size(); ++i) h.data()[i] = sample_gamma(2.0, 1.0, rng);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = sample_gamma(2.0, 1.0, rng);
  return make_topic_state(h, w);
}

Eigen::MatrixXi random_counts(int n, int p, RngStream& rng) {
  Eigen::MatrixXi v(n, p);
  for (int i = 0; i < v.size(); ++i) v.data()[i] = static_cast<int>(rng.below(5));
  return v;
}

}  // namespace

TEST(DrawZ, ConservesCountsAndSkipsEmptyCells) {
  RngStream rng(1, 0);
  auto st = random_state(7, 3, 5, rng);
  const auto v = random_counts(7, 5, rng);
  draw_Z(st, v, streams(1, 0, 7), 2);
  Eigen::MatrixXi sums = Eigen::MatrixXi::Zero(7, 5);
  for (std::size_t c = 0; c < st.z.size(); ++c) {
    int t = 0;
    for (int x : st.z.cell(c)) t += x;
    sums(st.z.tumor[c], st.z.category[c]) = t;
    EXPECT_GT(v(st.z.tumor[c], st.z.category[c]), 0);
  }
  EXPECT_EQ(sums, v);
  EXPECT_EQ(st.z_row_topic.sum(), v.sum());
}

TEST(DrawZ, SingleTopicTakesEverything) {
  RngStream rng(2, 0);
  auto st = random_state(4, 1, 3, rng);
  const auto v = random_counts(4, 3, rng);
  draw_Z(st, v, rng);
  EXPECT_EQ(st.z_topic_category.cast<int>(), v.colwise().sum());
}

TEST(DrawZ, AllocationFractionFollowsPhi) {
  Eigen::MatrixXd h(1, 2), w(2, 1);
  h << 1, 1;
  w << 3, 1;
  auto st = make_topic_state(h, w);
  Eigen::MatrixXi v(1, 1);
  v << 1;
  RngStream rng(3, 0);
  const int reps = 100'000;
  double first = 0.0;
  for (int r = 0; r < reps; ++r) {
    draw_Z(st, v, rng);
    first += st.z_row_topic(0, 0);
  }
  EXPECT_NEAR(first / reps, 0.75, 3 * std::sqrt(0.75 * 0.25 / reps));
}

TEST(DrawZ, ThreadCountDoesNotChangeDraws) {
  RngStream rng(4, 0);
  auto a = random_state(9, 3, 4, rng);
  auto b = a;
  const auto v = random_counts(9, 4, rng);
  draw_Z(a, v, streams(4, 2, 9), 1);
  draw_Z(b, v, streams(4, 2, 9), 4);
  EXPECT_EQ(a.z.counts, b.z.counts);
}

TEST(DrawW, ConditionalParametersAreExact) {
  RngStream rng(5, 0);
  auto st = random_state(6, 2, 4, rng);
  const auto v = random_counts(6, 4, rng);
  draw_Z(st, v, rng);
  TopicHyper hyper;
  const auto g = w_conditional(st, hyper);
  for (int s = 0; s < 2; ++s) {
    for (int p = 0; p < 4; ++p) {
      double z = 0.0;
      for (std::size_t c = 0; c < st.z.size(); ++c)
        if (st.z.category[c] == p) z += st.z.cell(c)[s];
      EXPECT_EQ(g.shape(s, p), hyper.a_W + z);
      EXPECT_EQ(g.rate(s, p), hyper.b_W + st.Htilde.col(s).sum());
    }
  }
}

TEST(DrawW, NoDataReducesToPrior) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Constant(1, 1, 1e-300);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(1, 1);
  auto st = make_topic_state(h, w);
  TopicHyper hyper;
  const auto g = w_conditional(st, hyper);
  EXPECT_EQ(g.shape(0, 0), 0.5);
  EXPECT_NEAR(g.rate(0, 0), 0.5, 1e-300);
}

TEST(DrawW, MonteCarloMean) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Constant(1, 1, 5.0);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(1, 1);
  auto st = make_topic_state(h, w);
  Eigen::MatrixXi v(1, 1);
  v << 10;
  RngStream rng(6, 0);
  draw_Z(st, v, rng);
  TopicHyper hyper;
  const int reps = 200'000;
  std::vector<double> x(reps);
  for (auto& d : x) {
    draw_W(st, hyper, rng);
    d = st.Wtilde(0, 0);
  }
  EXPECT_NEAR(stats::mean(x), 10.5 / 5.5, 3 * stats::sd(x) / std::sqrt(reps));
}

TEST(DrawW, ExchangeableCategories) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Constant(2, 1, 1.0);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(1, 2);
  auto st = make_topic_state(h, w);
  Eigen::MatrixXi v(2, 2);
  v << 3, 2, 2, 3;
  RngStream rng(7, 0);
  draw_Z(st, v, rng);
  TopicHyper hyper;
  std::vector<double> a, b;
  for (int r = 0; r < 50'000; ++r) {
    draw_W(st, hyper, rng);
    a.push_back(st.Wtilde(0, 0));
    b.push_back(st.Wtilde(0, 1));
  }
  EXPECT_GT(stats::ks_two_sample(a, b).p_value, 1e-3);
}

TEST(SigmaTopic, HandExampleAndFloor) {
  Eigen::MatrixXd h(2, 2), w(2, 3);
  h << 1, 4, 3, 4;
  w << 1, 0.5, 0.5, 1, 1, 1;
  const std::vector<double> m{1, 1};
  const auto sigma = compute_sigma_topic(h, w, m);
  EXPECT_NEAR(sigma(0), 2 * std::sqrt(2.0), 1e-12);
  EXPECT_EQ(sigma(1), 1e-8);
  const Eigen::MatrixXd w10 = 10 * w;
  EXPECT_NEAR(compute_sigma_topic(h, w10, m)(0), 10 * sigma(0), 1e-12);
  EXPECT_THROW(compute_sigma_topic(h.topRows(1), w, std::vector<double>{1}), DomainError);
}

TEST(HRow, HandExampleRatio) {
  // S = 1, K = 2, Wtilde row sum 1 so the topic column is Htilde / (M sigma).
  Eigen::MatrixXd h = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd base = Eigen::MatrixXd::Zero(1, 2);
  Eigen::MatrixXd theta(1, 2);
  theta << 1, -1;
  const double r = std::exp(frozen_log_ratio(h.row(0), 2 * h.row(0), base.row(0), w.rowwise().sum(),
                                             Eigen::VectorXd::Ones(1), 1.0, theta, 0));
  const double expected = (std::exp(2) / (std::exp(2) + std::exp(-2))) / (std::exp(1) / (std::exp(1) + std::exp(-1)));
  EXPECT_NEAR(r, expected, 1e-12);
  EXPECT_NEAR(r, 1.1149, 1e-4);

  auto st = make_topic_state(h, w);
  const std::vector<double> burden{1.0};
  const std::vector<int> labels{0};
  SupervisedContext ctx{&base, &theta, burden, labels};
  TopicHyper hyper;
  hyper.S = 1;
  HRowUpdater up(st, hyper, ctx);
  const int block[] = {0};
  EXPECT_NEAR(std::exp(up.log_ratio(0, block, Eigen::VectorXd::Constant(1, 2.0))), expected, 1e-12);
  EXPECT_NEAR(up.log_ratio(0, block, Eigen::VectorXd::Constant(1, 1.0)), 0.0, 1e-15);
}

TEST(HRow, ZeroThetaAlwaysAccepts) {
  RngStream rng(8, 0);
  auto st = random_state(10, 4, 5, rng);
  draw_Z(st, random_counts(10, 5, rng), rng);
  const Eigen::MatrixXd base = Eigen::MatrixXd::Random(10, 3);
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(4, 3);
  const std::vector<double> burden(10, 5.0);
  const std::vector<int> labels(10, 1);
  SupervisedContext ctx{&base, &theta, burden, labels};
  TopicHyper hyper;
  hyper.S = 4;
  hyper.block_size = 2;
  for (auto mode : {SigmaMode::Frozen, SigmaMode::PerIteration}) {
    st.sigma_mode = mode;
    const auto stats = sweep_H(st, hyper, ctx, streams(8, 0, 10));
    EXPECT_EQ(stats.accepted, stats.blocks);
    EXPECT_EQ(stats.blocks, 20);
  }
}

TEST(HRow, FrozenSweepIsOrderAndThreadInvariant) {
  RngStream rng(9, 0);
  auto a = random_state(12, 5, 6, rng);
  draw_Z(a, random_counts(12, 6, rng), rng);
  a.sigma_topic = Eigen::VectorXd::Constant(5, 0.3);
  auto b = a;
  Eigen::MatrixXd base = Eigen::MatrixXd::Random(12, 3);
  Eigen::MatrixXd theta = 2 * Eigen::MatrixXd::Random(5, 3);
  std::vector<double> burden(12, 4.0);
  std::vector<int> labels(12);
  for (int i = 0; i < 12; ++i) labels[i] = i % 3;
  SupervisedContext ctx{&base, &theta, burden, labels};
  TopicHyper hyper;
  hyper.S = 5;
  hyper.block_size = 2;
  sweep_H(a, hyper, ctx, streams(9, 1, 12), 1);
  // Reverse row order, one row at a time.
  HRowUpdater up(b, hyper, ctx);
  for (int n = 11; n >= 0; --n) {
    RngStream r = streams(9, 1, 12)(n);
    up.update_row(n, r);
  }
  EXPECT_EQ(a.Htilde, b.Htilde);
  auto c = b;
  c.Htilde = a.Htilde;
  EXPECT_EQ(c.Htilde, b.Htilde);
}

TEST(HRow, PerIterationKeepsSigmaConsistent) {
  RngStream rng(10, 0);
  auto st = random_state(8, 3, 4, rng);
  st.sigma_mode = SigmaMode::PerIteration;
  draw_Z(st, random_counts(8, 4, rng), rng);
  Eigen::MatrixXd base = Eigen::MatrixXd::Zero(8, 2);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Random(3, 2);
  std::vector<double> burden{3, 4, 5, 6, 3, 4, 5, 6};
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  SupervisedContext ctx{&base, &theta, burden, labels};
  TopicHyper hyper;
  hyper.S = 3;
  sweep_H(st, hyper, ctx, streams(10, 0, 8));
  const auto fresh = compute_sigma_topic(st, burden);
  EXPECT_LT((fresh - st.sigma_topic).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TopicState, NormalizedIdentity) {
  RngStream rng(11, 0);
  const auto st = random_state(5, 3, 7, rng);
  const Eigen::MatrixXd a = st.normalized_H() * st.normalized_W();
  const Eigen::MatrixXd b = st.Htilde * st.Wtilde;
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(st.normalized_W().row(s).sum(), 1.0, 1e-12);
  for (int n = 0; n < 5; ++n) EXPECT_NEAR(st.exposures().row(n).sum(), 1.0, 1e-12);
}

TEST(TopicHyper, DefaultsAndValidation) {
  TopicHyper h;
  EXPECT_EQ(h.a_H, 1.0);
  EXPECT_EQ(h.b_H, 1.0);
  EXPECT_EQ(h.a_W, 0.5);
  EXPECT_EQ(h.b_W, 0.5);
  EXPECT_EQ(h.S, 50);
  EXPECT_EQ(h.effective_block_size(), 10);
  h.S = 5;
  EXPECT_EQ(h.effective_block_size(), 5);
  h.max_retries = 26;
  EXPECT_THROW(h.validate(), ConfigError);
}
