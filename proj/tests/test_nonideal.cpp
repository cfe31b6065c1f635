#include <catch2/catch_amalgamated.hpp>

#include "cmsim/nonideal.hpp"
#include "cmsim/rng.hpp"

using namespace cmsim;

namespace {

DeviceModel hfo2_like() {
  DeviceModel d;
  d.name = "hfo2";
  d.g_on_S = 1e-3;
  d.hrs_lrs_ratio = 10.48;
  return d;
}

RtnModel table_rtn() {
  // Occurrence rates of the eight 25..200 kOhm levels; medians rise with
  // resistance.
  RtnModel m;
  const double occ[] = {0.40625, 0.4375, 0.46875, 0.59375,
                        0.625,   0.65625, 0.6875,  0.71875};
  for (int k = 0; k < 8; ++k) {
    RtnLevel level;
    level.resistance_ohm = 25e3 * (k + 1);
    level.occurrence = occ[k];
    level.mu_log = std::log(0.02 + k * 0.04);
    level.sigma_log = 1.0;
    m.levels.push_back(level);
  }
  return m;
}

}  // namespace

TEST_CASE("population categories") {
  const DeviceModel device = hfo2_like();
  const double g_on = device.g_on_S, g_off = device.g_off_S();

  SECTION("all fractions zero: every cell spans the full range") {
    Rng rng(1);
    const DevicePopulation pop =
        sample_population(16, 16, DevicePopulationSpec{}, device, rng);
    for (std::size_t i = 0; i < pop.g_lo.size(); ++i) {
      REQUIRE(pop.g_lo[i] == g_off);
      REQUIRE(pop.g_hi[i] == g_on);
    }
  }
  SECTION("all stuck low: every cell is a low point range") {
    DevicePopulationSpec spec;
    spec.fraction_stuck_low = 1.0;
    Rng rng(2);
    const DevicePopulation pop = sample_population(8, 8, spec, device, rng);
    for (std::size_t i = 0; i < pop.g_lo.size(); ++i) {
      REQUIRE(pop.g_lo[i] == pop.g_hi[i]);
      REQUIRE(pop.g_lo[i] >= g_off);
      REQUIRE(pop.g_lo[i] <= g_off + 0.1 * (g_on - g_off));
    }
  }
  SECTION("category counts match binomial expectation within 3 sigma") {
    DevicePopulationSpec spec;
    spec.fraction_stuck_high = 0.02;
    spec.fraction_stuck_low = 0.02;
    spec.fraction_reduced_range = 0.1;
    Rng rng(3);
    const int n = 100000;
    const DevicePopulation pop = sample_population(1000, 100, spec, device, rng);
    int stuck = 0, reduced = 0, normal = 0;
    for (std::size_t i = 0; i < pop.g_lo.size(); ++i) {
      if (pop.g_lo[i] == pop.g_hi[i])
        ++stuck;
      else if (pop.g_hi[i] < g_on)
        ++reduced;
      else
        ++normal;
    }
    auto within3 = [&](int count, double p) {
      const double sigma = std::sqrt(n * p * (1 - p));
      return std::abs(count - n * p) <= 3 * sigma;
    };
    REQUIRE(within3(stuck, 0.04));
    REQUIRE(within3(reduced, 0.1));
    REQUIRE(within3(normal, 0.86));
  }
  SECTION("fractions above one are rejected") {
    DevicePopulationSpec spec;
    spec.fraction_stuck_high = 0.7;
    spec.fraction_stuck_low = 0.7;
    Rng rng(4);
    REQUIRE_THROWS_AS(sample_population(4, 4, spec, device, rng),
                      std::invalid_argument);
  }
}

TEST_CASE("program clamps into the achievable range") {
  Rng rng(5);

  SECTION("target above a reduced range caps at the range top") {
    // A cell topping out at 0.8 mS receives a 0.9 mS request.
    REQUIRE(program(0.9e-3, 0.1e-3, 0.8e-3, 0.0, rng) == 0.8e-3);
  }
  SECTION("in-range target with zero noise is exact") {
    REQUIRE(program(0.5e-3, 0.1e-3, 1.0e-3, 0.0, rng) == 0.5e-3);
  }
  SECTION("stuck cells ignore the target") {
    REQUIRE(program(0.9e-3, 0.25e-3, 0.25e-3, 0.0, rng) == 0.25e-3);
    REQUIRE(program(1e-6, 0.25e-3, 0.25e-3, 0.0, rng) == 0.25e-3);
  }
  SECTION("zero target is never electroformed") {
    REQUIRE(program(0.0, 0.25e-3, 0.25e-3, 0.0, rng) == 0.0);
    REQUIRE(program(0.0, 0.1e-3, 1.0e-3, 0.5, rng) == 0.0);
  }
  SECTION("idempotent for zero noise") {
    for (int i = 0; i < 100; ++i) {
      const double target = rng.uniform(0.0, 1.5e-3);
      const double lo = rng.uniform(0.05e-3, 0.3e-3);
      const double hi = lo + rng.uniform(0.0, 0.7e-3);
      const double once = program(target, lo, hi, 0.0, rng);
      REQUIRE(program(once, lo, hi, 0.0, rng) == once);
    }
  }
  SECTION("noise stays within the clamped range") {
    for (int i = 0; i < 1000; ++i) {
      const double g = program(0.5e-3, 0.2e-3, 0.6e-3, 0.3, rng);
      REQUIRE(g >= 0.2e-3);
      REQUIRE(g <= 0.6e-3);
    }
  }
}

namespace {

ConductanceTile small_tile(double g_value, int rows = 4, int cols = 4) {
  ConductanceTile tile;
  tile.geometry = CrossbarGeometry{rows, cols, 0.0, 0.0};
  tile.g = Eigen::MatrixXd::Constant(rows, cols, g_value);
  tile.used_row_begin = 0;
  tile.row_map.resize(rows);
  for (int i = 0; i < rows; ++i) tile.row_map[i] = i;
  tile.column_roles.assign(cols, ColumnRole{ColumnRole::Kind::Positive, 0});
  return tile;
}

}  // namespace

TEST_CASE("apply_rtn preserves zeros and signs") {
  const RtnModel model = table_rtn();
  ConductanceTile tile = small_tile(1.0 / 100e3);
  tile.g(0, 0) = 0.0;
  Rng rng(6);
  const ConductanceTile out = apply_rtn(tile, model, rng);
  REQUIRE(out.g(0, 0) == 0.0);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (tile.g(r, c) > 0.0) REQUIRE(out.g(r, c) > 0.0);
}

TEST_CASE("apply_rtn with zero occurrence leaves the tile unchanged") {
  RtnModel model = table_rtn();
  for (auto& level : model.levels) level.occurrence = 0.0;
  const ConductanceTile tile = small_tile(1.0 / 50e3);
  Rng rng(7);
  const ConductanceTile out = apply_rtn(tile, model, rng);
  REQUIRE(out.g == tile.g);
}

TEST_CASE("RTN occurrence frequency and magnitude match the level") {
  const RtnModel model = table_rtn();

  // 10^6 draws on cells sitting at the 200 kOhm level: disturbance frequency
  // within 3 sigma of 71.875%, and the median |relative change| (conditioned
  // on occurrence) within 5% of exp(mu) for that level.
  const int n = 1000000;
  ConductanceTile tile = small_tile(1.0 / 200e3, 1000, 1000);
  Rng rng(8);
  const ConductanceTile out = apply_rtn(tile, model, rng);

  std::vector<double> magnitudes;
  int disturbed = 0;
  for (int r = 0; r < 1000; ++r)
    for (int c = 0; c < 1000; ++c)
      if (out.g(r, c) != tile.g(r, c)) {
        ++disturbed;
        magnitudes.push_back(std::abs(out.g(r, c) / tile.g(r, c) - 1.0));
      }
  const double p = 0.71875;
  const double sigma = std::sqrt(n * p * (1 - p));
  REQUIRE(std::abs(disturbed - n * p) <= 3 * sigma);

  // The 0.01 floor folds the far negative tail onto 0.99, which does not
  // move the median; exp(mu) at the 200 kOhm level is 0.30.
  std::nth_element(magnitudes.begin(),
                   magnitudes.begin() + magnitudes.size() / 2,
                   magnitudes.end());
  REQUIRE_THAT(magnitudes[magnitudes.size() / 2],
               Catch::Matchers::WithinRel(0.30, 0.05));
}

TEST_CASE("aVMCO-style occurrence at the 1 MOhm level") {
  RtnModel model;
  const double occ[] = {0.0667, 0.0889, 0.0889, 0.156,
                        0.20,   0.20,   0.244,  0.289};
  const double res[] = {1.00e6, 1.92e6, 2.84e6, 3.76e6,
                        4.68e6, 5.60e6, 6.52e6, 7.50e6};
  for (int k = 0; k < 8; ++k)
    model.levels.push_back({res[k], occ[k], std::log(0.01 + k * 0.0129), 1.0});

  const int n = 250000;
  ConductanceTile tile = small_tile(1.0 / 1.00e6, 500, 500);
  Rng rng(9);
  const ConductanceTile out = apply_rtn(tile, model, rng);
  int disturbed = 0;
  for (int r = 0; r < 500; ++r)
    for (int c = 0; c < 500; ++c)
      if (out.g(r, c) != tile.g(r, c)) ++disturbed;
  const double p = 0.0667;
  const double sigma = std::sqrt(n * p * (1 - p));
  REQUIRE(std::abs(disturbed - n * p) <= 3 * sigma);
}

TEST_CASE("RTN determinism and the multiplicative floor") {
  const RtnModel model = table_rtn();
  const ConductanceTile tile = small_tile(1.0 / 175e3, 50, 50);
  Rng a(10), b(10);
  const ConductanceTile out1 = apply_rtn(tile, model, a);
  const ConductanceTile out2 = apply_rtn(tile, model, b);
  REQUIRE(out1.g == out2.g);
  // Never non-positive, never below the 1% floor.
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 50; ++c)
      REQUIRE(out1.g(r, c) >= tile.g(r, c) * kRtnFloor - 1e-18);
}

TEST_CASE("negative-only RTN never increases conductance") {
  const RtnModel model = table_rtn();
  const ConductanceTile tile = small_tile(1.0 / 25e3, 100, 100);
  Rng rng(11);
  const ConductanceTile out =
      apply_rtn(tile, model, rng, RtnSign::NegativeOnly);
  for (int r = 0; r < 100; ++r)
    for (int c = 0; c < 100; ++c) REQUIRE(out.g(r, c) <= tile.g(r, c));
}
