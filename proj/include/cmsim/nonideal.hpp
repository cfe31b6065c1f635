#pragma once

// Stochastic non-ideality models applied to conductance tiles: programming
// stage faults (stuck devices, reduced ranges, programming imprecision) and
// read-stage random telegraph noise. Stateless given an explicit RNG stream.

#include <cmath>
#include <stdexcept>

#include "cmsim/device.hpp"
#include "cmsim/mapping.hpp"
#include "cmsim/rng.hpp"

namespace cmsim {

/// Independently assigns each cell a behaviour category per the spec'd
/// fractions: normal cells achieve [g_off, g_on]; reduced-range cells cap at a
/// sampled g_hi; stuck cells collapse to a point in the top/bottom decile of
/// the range. Deterministic in the RNG stream.
inline DevicePopulation sample_population(int rows, int cols,
                                          const DevicePopulationSpec& spec,
                                          const DeviceModel& device, Rng& rng) {
  spec.validate();
  const double g_on = device.g_on_S;
  const double g_off = device.g_off_S();
  const double decile = 0.1 * (g_on - g_off);

  DevicePopulation pop;
  pop.rows = rows;
  pop.cols = cols;
  pop.g_lo.resize(std::size_t(rows) * cols);
  pop.g_hi.resize(std::size_t(rows) * cols);

  for (std::size_t i = 0; i < pop.g_lo.size(); ++i) {
    const double u = rng.uniform();
    if (u < spec.fraction_stuck_high) {
      const double g = rng.uniform(g_on - decile, g_on);
      pop.g_lo[i] = pop.g_hi[i] = g;
    } else if (u < spec.fraction_stuck_high + spec.fraction_stuck_low) {
      const double g = rng.uniform(g_off, g_off + decile);
      pop.g_lo[i] = pop.g_hi[i] = g;
    } else if (u < spec.fraction_stuck_high + spec.fraction_stuck_low +
                       spec.fraction_reduced_range) {
      pop.g_lo[i] = g_off;
      pop.g_hi[i] = rng.uniform(spec.reduced_range_alpha * g_on, g_on);
    } else {
      pop.g_lo[i] = g_off;
      pop.g_hi[i] = g_on;
    }
  }
  return pop;
}

/// Programs one cell: a zero target means the device is never electroformed
/// (faults do not apply); otherwise the target clamps into the cell's
/// achievable range, optionally perturbed by relative Gaussian programming
/// noise and re-clamped.
inline double program(double target, double g_lo, double g_hi,
                      double sigma_prog, Rng& rng) {
  if (target == 0.0) return 0.0;
  double g = std::clamp(target, g_lo, g_hi);
  if (sigma_prog > 0.0) {
    g *= 1.0 + rng.normal(0.0, sigma_prog);
    g = std::clamp(g, g_lo, g_hi);
  }
  return g;
}

/// Applies a sampled population to a whole tile.
inline ConductanceTile program_tile(const ConductanceTile& tile,
                                    const DevicePopulation& population,
                                    double sigma_prog, Rng& rng) {
  if (population.rows != tile.geometry.rows ||
      population.cols != tile.geometry.cols)
    throw std::invalid_argument("program_tile: population shape mismatch");
  ConductanceTile out = tile;
  for (int r = 0; r < tile.geometry.rows; ++r)
    for (int c = 0; c < tile.geometry.cols; ++c) {
      const std::size_t i = population.index(r, c);
      out.g(r, c) = program(tile.g(r, c), population.g_lo[i],
                            population.g_hi[i], sigma_prog, rng);
    }
  return out;
}

enum class RtnSign { Symmetric, NegativeOnly };

// Relative deviations are floored so a disturbed conductance stays positive.
inline constexpr double kRtnFloor = 0.01;

/// Read-stage RTN: each nonzero cell is matched to its nearest resistance
/// level; with that level's occurrence probability the conductance becomes
/// g * max(1 + s*delta, 0.01) with delta ~ LogNormal(mu_k, sigma_k) and
/// s = +-1 (or -1 in negative-only mode). Zero cells are never disturbed.
inline ConductanceTile apply_rtn(const ConductanceTile& tile,
                                 const RtnModel& model, Rng& rng,
                                 RtnSign sign_mode = RtnSign::Symmetric) {
  model.validate();
  ConductanceTile out = tile;
  for (int r = 0; r < tile.geometry.rows; ++r) {
    for (int c = 0; c < tile.geometry.cols; ++c) {
      const double g = tile.g(r, c);
      if (g == 0.0) continue;
      const RtnLevel& level = model.levels[model.nearest_level(g)];
      if (!rng.bernoulli(level.occurrence)) continue;
      const double delta = rng.lognormal(level.mu_log, level.sigma_log);
      double sign = -1.0;
      if (sign_mode == RtnSign::Symmetric)
        sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      out.g(r, c) = g * std::max(1.0 + sign * delta, kRtnFloor);
    }
  }
  return out;
}

}  // namespace cmsim
