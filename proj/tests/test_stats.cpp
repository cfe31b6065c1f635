#include <catch2/catch_amalgamated.hpp>

#include "cmsim/rng.hpp"
#include "cmsim/stats.hpp"

using namespace cmsim;

TEST_CASE("hand-computed quartiles and outlier") {
  // h = (N-1)p convention on {1,2,3,4,5,100}: Q1 = 2.25, Q3 = 4.75.
  const SummaryStats s = summarize({1, 2, 3, 4, 5, 100});
  REQUIRE_THAT(s.q1, Catch::Matchers::WithinAbs(2.25, 1e-12));
  REQUIRE_THAT(s.q3, Catch::Matchers::WithinAbs(4.75, 1e-12));
  REQUIRE_THAT(s.iqr, Catch::Matchers::WithinAbs(2.5, 1e-12));
  REQUIRE(s.outliers == std::vector<double>{100});
  REQUIRE(s.whisker_low == 1.0);
  REQUIRE(s.whisker_high == 5.0);
}

TEST_CASE("single value collapses every statistic") {
  const SummaryStats s = summarize({0.42});
  REQUIRE(s.median == 0.42);
  REQUIRE(s.q1 == 0.42);
  REQUIRE(s.q3 == 0.42);
  REQUIRE(s.whisker_low == 0.42);
  REQUIRE(s.whisker_high == 0.42);
  REQUIRE(s.outliers.empty());
}

TEST_CASE("symmetric data: median equals mean") {
  std::vector<double> values;
  for (int i = -50; i <= 50; ++i) values.push_back(3.0 + i * 0.01);
  const SummaryStats s = summarize(values);
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  REQUIRE_THAT(s.median, Catch::Matchers::WithinAbs(mean, 1e-12));
}

TEST_CASE("empty input is rejected") {
  REQUIRE_THROWS_AS(summarize({}), std::invalid_argument);
}

namespace {

// Brute-force reference for the stated quantile convention.
double reference_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * p;
  const std::size_t lo = std::size_t(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - double(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace

TEST_CASE("matches brute-force reference on random lists") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + int(rng.uniform_below(40));
    std::vector<double> values(n);
    for (auto& v : values) v = rng.uniform(-5.0, 5.0);
    const SummaryStats s = summarize(values);
    REQUIRE_THAT(s.median,
                 Catch::Matchers::WithinAbs(reference_quantile(values, 0.5), 1e-12));
    REQUIRE_THAT(s.q1,
                 Catch::Matchers::WithinAbs(reference_quantile(values, 0.25), 1e-12));
    REQUIRE_THAT(s.q3,
                 Catch::Matchers::WithinAbs(reference_quantile(values, 0.75), 1e-12));
    // Whiskers clip to observed data inside the 1.5*IQR fences.
    for (double v : values) {
      if (v < s.whisker_low || v > s.whisker_high) {
        const bool outlier =
            std::find(s.outliers.begin(), s.outliers.end(), v) != s.outliers.end();
        REQUIRE(outlier);
      }
    }
  }
}
