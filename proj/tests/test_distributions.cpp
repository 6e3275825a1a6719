#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/inverse_gaussian.hpp>

#include <cmath>
#include <vector>

#include "topical_gibbs/distributions.hpp"
#include "topical_gibbs/stats.hpp"

using namespace topical_gibbs;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double se = 0.0;
};

template <typename Draw>
Moments moments(int n, Draw&& draw) {
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw();
    s += x;
    ss += x * x;
  }
  Moments m;
  m.mean = s / n;
  m.var = (ss - n * m.mean * m.mean) / (n - 1);
  m.se = std::sqrt(m.var / n);
  return m;
}

}  // namespace

TEST(Gamma, MeanMatchesShapeOverRate) {
  RngStream rng(1, 0);
  const auto m = moments(1'000'000, [&] { return sample_gamma(4.01, 5.01, rng); });
  EXPECT_NEAR(m.mean, 4.01 / 5.01, 3 * m.se);
}

TEST(Gamma, UnitShapeIsExponential) {
  RngStream rng(2, 0);
  std::vector<double> x(100'000);
  for (auto& v : x) v = sample_gamma(1.0, 1.0, rng);
  const auto ks = stats::ks_one_sample(x, [](double t) { return 1.0 - std::exp(-t); });
  EXPECT_GT(ks.p_value, 1e-3);
}

TEST(Gamma, SmallShapeGoodnessOfFit) {
  RngStream rng(3, 0);
  boost::math::gamma_distribution<double> law(0.3, 1.0 / 2.0);
  std::vector<double> x(100'000);
  for (auto& v : x) v = sample_gamma(0.3, 2.0, rng);
  const auto ks = stats::ks_one_sample(x, [&](double t) { return boost::math::cdf(law, t); });
  EXPECT_GT(ks.p_value, 1e-3);
}

TEST(Gamma, RejectsNonPositiveParameters) {
  RngStream rng(4, 0);
  EXPECT_THROW(sample_gamma(0.0, 1.0, rng), DomainError);
  EXPECT_THROW(sample_gamma(1.0, -1.0, rng), DomainError);
}

TEST(InverseGaussian, MeanAndVariance) {
  RngStream rng(5, 0);
  const auto m = moments(1'000'000, [&] { return sample_inverse_gaussian(2.0, 4.0, rng); });
  EXPECT_NEAR(m.mean, 2.0, 3 * m.se);
  EXPECT_NEAR(m.var, 2.0, 0.05);
}

TEST(InverseGaussian, ConcentratesForLargeShape) {
  RngStream rng(6, 0);
  int inside = 0;
  for (int i = 0; i < 10'000; ++i) {
    const double x = sample_inverse_gaussian(1.0, 1e6, rng);
    inside += x >= 0.99 && x <= 1.01;
  }
  EXPECT_GE(inside, 9900);
}

TEST(InverseGaussian, GoodnessOfFit) {
  RngStream rng(7, 0);
  boost::math::inverse_gaussian_distribution<double> law(2.0, 4.0);
  std::vector<double> x(100'000);
  for (auto& v : x) v = sample_inverse_gaussian(2.0, 4.0, rng);
  EXPECT_GT(stats::ks_one_sample(x, [&](double t) { return boost::math::cdf(law, t); }).p_value, 1e-3);
}

TEST(PolyaGamma, MeansMatchTiltedMoment) {
  const double cs[] = {0.0, 0.1, 0.5, 1.0, 2.0, 5.0};
  for (double c : cs) {
    RngStream rng(8, static_cast<std::uint64_t>(c * 10));
    const auto m = moments(1'000'000, [&] { return sample_polya_gamma(1, c, rng); });
    const double expected = c == 0.0 ? 0.25 : std::tanh(c / 2) / (2 * c);
    EXPECT_NEAR(m.mean, expected, 4 * m.se) << "c = " << c;
  }
}

TEST(PolyaGamma, SymmetricInTilt) {
  RngStream a(9, 0), b(9, 1);
  std::vector<double> x(100'000), y(100'000);
  for (auto& v : x) v = sample_polya_gamma(1, 1.5, a);
  for (auto& v : y) v = sample_polya_gamma(1, -1.5, b);
  EXPECT_GT(stats::ks_two_sample(x, y).p_value, 1e-3);
}

TEST(PolyaGamma, OnlyUnitShapeSupported) {
  RngStream rng(10, 0);
  EXPECT_THROW(sample_polya_gamma(2, 0.0, rng), DomainError);
}

TEST(MvnPrecision, StandardNormal) {
  RngStream rng(11, 0);
  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd shift = Eigen::VectorXd::Zero(2);
  const int n = 100'000;
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  Eigen::Matrix2d ss = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d x = sample_mvn_precision(q, shift, rng);
    s += x;
    ss += x * x.transpose();
  }
  const Eigen::Vector2d mean = s / n;
  const Eigen::Matrix2d cov = ss / n - mean * mean.transpose();
  const double se = 1.0 / std::sqrt(n);
  EXPECT_NEAR(mean(0), 0.0, 3 * se);
  EXPECT_NEAR(mean(1), 0.0, 3 * se);
  EXPECT_NEAR(cov(0, 0), 1.0, 3 * std::sqrt(2.0) * se);
  EXPECT_NEAR(cov(1, 1), 1.0, 3 * std::sqrt(2.0) * se);
  EXPECT_NEAR(cov(0, 1), 0.0, 3 * se);
}

TEST(MvnPrecision, DiagonalPrecisionMeanAndVariance) {
  RngStream rng(12, 0);
  Eigen::MatrixXd q(2, 2);
  q << 4, 0, 0, 1;
  Eigen::VectorXd shift(2);
  shift << 4, 1;
  const int n = 100'000;
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = sample_mvn_precision(q, shift, rng);
    a[i] = x(0);
    b[i] = x(1);
  }
  EXPECT_NEAR(stats::mean(a), 1.0, 3 * std::sqrt(0.25 / n));
  EXPECT_NEAR(stats::mean(b), 1.0, 3 * std::sqrt(1.0 / n));
  EXPECT_NEAR(stats::variance(a), 0.25, 0.01);
  EXPECT_NEAR(stats::variance(b), 1.0, 0.03);
}

TEST(MvnPrecision, NonPositiveDefiniteReportsPivot) {
  RngStream rng(13, 0);
  Eigen::MatrixXd q(3, 3);
  q << 1, 0, 0, 0, 0, 0, 0, 0, 1;
  try {
    sample_mvn_precision(q, Eigen::VectorXd::Zero(3), rng);
    FAIL() << "expected a factorization error";
  } catch (const FactorizationError& e) {
    EXPECT_EQ(e.pivot(), 1);
  }
}

TEST(Multinomial, EdgeCases) {
  RngStream rng(14, 0);
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(sample_multinomial(0, p, rng), (std::vector<std::int64_t>{0, 0, 0}));
  const std::vector<double> degenerate{1.0, 0.0, 0.0};
  EXPECT_EQ(sample_multinomial(7, degenerate, rng), (std::vector<std::int64_t>{7, 0, 0}));
  const std::vector<double> negative{1.2, -0.2};
  EXPECT_THROW(sample_multinomial(3, negative, rng), DomainError);
}

TEST(Multinomial, CellFrequenciesAndChiSquare) {
  RngStream rng(15, 0);
  const std::vector<double> p{0.2, 0.3, 0.5};
  const std::int64_t total = 100'000;
  const auto counts = sample_multinomial(total, p, rng);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = total * p[i];
    EXPECT_NEAR(static_cast<double>(counts[i]), e, 3 * std::sqrt(total * p[i] * (1 - p[i])));
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  boost::math::chi_squared_distribution<double> law(2.0);
  EXPECT_GT(boost::math::cdf(boost::math::complement(law, chi2)), 1e-3);
}

TEST(Multinomial, RepeatedSmallDrawsGoodnessOfFit) {
  RngStream rng(16, 0);
  const std::vector<double> p{0.1, 0.6, 0.3};
  std::vector<double> cells(3, 0.0);
  for (int i = 0; i < 100'000; ++i) {
    const auto c = sample_multinomial(1, p, rng);
    for (int k = 0; k < 3; ++k) cells[k] += static_cast<double>(c[k]);
  }
  double chi2 = 0.0;
  for (int k = 0; k < 3; ++k) chi2 += std::pow(cells[k] - 1e5 * p[k], 2) / (1e5 * p[k]);
  boost::math::chi_squared_distribution<double> law(2.0);
  EXPECT_GT(boost::math::cdf(boost::math::complement(law, chi2)), 1e-3);
}

TEST(RngStream, ReproducibleAndDistinct) {
  RngStream a(42, 3), b(42, 3), c(42, 4);
  std::vector<double> xa, xb, xc;
  for (int i = 0; i < 5; ++i) {
    xa.push_back(sample_polya_gamma(1, 0.7, a));
    xb.push_back(sample_polya_gamma(1, 0.7, b));
    xc.push_back(sample_polya_gamma(1, 0.7, c));
  }
  EXPECT_EQ(xa, xb);
  EXPECT_NE(xa, xc);
}

TEST(RngStream, SerializationRoundTrip) {
  RngStream a(5, 9);
  a.normal();
  a.uniform();
  RngStream b = RngStream::deserialize(a.serialize());
  EXPECT_TRUE(a == b);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}
