#include <gtest/gtest.h>

#include "geweke_support.hpp"

namespace {

void expect_agreement(const std::vector<geweke::Comparison>& results) {
  for (const auto& r : results) {
    EXPECT_GT(r.p_value, 0.01) << r.name << ": KS D = " << r.statistic << ", n_eff = " << r.n_eff;
  }
}

TEST(Geweke, UnsupervisedTopicBlock) { expect_agreement(geweke::topic_block(50000, 11)); }

TEST(Geweke, LogisticBlockOnFixedDesign) { expect_agreement(geweke::logistic_block(50000, 12)); }

TEST(Geweke, FullLoopPerIterationSigmaPlugIn) { expect_agreement(geweke::full_loop(50000, 13)); }

}  // namespace
