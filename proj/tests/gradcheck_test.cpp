#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace ctm::testing {
namespace {

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const GradCase c = primitive_cases()[GetParam()];
  CheckResult total;
  for (std::uint64_t i = 0; i < kInstancesPerCase; ++i) total.merge(c.run(i));
  EXPECT_TRUE(total.ok()) << c.name << ": " << total.failures << " of " << total.coordinates
                          << " coordinates off; " << total.first_failure;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range<std::size_t>(0, primitive_cases().size()),
                         [](const auto& info) { return primitive_cases()[info.param].name; });

class ComposedGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ComposedGradient, MatchesCentralDifferences) {
  const GradCase c = composed_cases()[GetParam()];
  CheckResult total;
  for (std::uint64_t i = 0; i < kInstancesPerCase; ++i) total.merge(c.run(i));
  EXPECT_TRUE(total.ok()) << c.name << ": " << total.failures << " of " << total.coordinates
                          << " coordinates off; " << total.first_failure;
}

INSTANTIATE_TEST_SUITE_P(ComposedPaths, ComposedGradient,
                         ::testing::Range<std::size_t>(0, composed_cases().size()),
                         [](const auto& info) { return composed_cases()[info.param].name; });

}  // namespace
}  // namespace ctm::testing
