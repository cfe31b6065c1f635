#pragma once

// Memristive device descriptions: conductance range/states, read voltage,
// random-telegraph-noise statistics and programming-stage population model.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmsim {

/// One RTN-afflicted resistance level: occurrence probability and lognormal
/// parameters of the relative current deviation when RTN occurs.
struct RtnLevel {
  double resistance_ohm = 0.0;
  double occurrence = 0.0;   // probability in [0,1]
  double mu_log = 0.0;       // mean of ln(delta)
  double sigma_log = 1.0;    // stddev of ln(delta), > 0
};

struct RtnModel {
  std::vector<RtnLevel> levels;  // sorted by resistance ascending

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("RTN model has no levels");
    double prev_r = 0.0;
    for (const auto& l : levels) {
      if (l.resistance_ohm <= prev_r)
        throw std::invalid_argument("RTN levels must be sorted by resistance");
      if (l.occurrence < 0.0 || l.occurrence > 1.0)
        throw std::invalid_argument("RTN occurrence outside [0,1]");
      if (l.sigma_log <= 0.0)
        throw std::invalid_argument("RTN sigma must be positive");
      prev_r = l.resistance_ohm;
    }
  }

  /// Index of the level nearest in resistance to 1/g. g must be > 0.
  [[nodiscard]] std::size_t nearest_level(double conductance_S) const {
    const double r = 1.0 / conductance_S;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const double d = std::abs(levels[k].resistance_ohm - r);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }
};

/// Conductance bounds/states of one device technology. An empty `states_S`
/// means a continuous range [g_off, g_on]; otherwise the device programs only
/// to the listed conductances (sorted ascending, endpoints included).
/// hrs_lrs_ratio may be +infinity, the idealised limit with g_off = 0 used by
/// the exact-recovery checks.
struct DeviceModel {
  std::string name;
  double g_on_S = 1e-3;
  double hrs_lrs_ratio = 10.0;
  std::vector<double> states_S;
  double v_read_V = 0.1;
  std::optional<RtnModel> rtn;

  [[nodiscard]] double g_off_S() const {
    return std::isinf(hrs_lrs_ratio) ? 0.0 : g_on_S / hrs_lrs_ratio;
  }
  [[nodiscard]] bool discrete() const { return !states_S.empty(); }

  void validate() const {
    if (g_on_S <= 0.0) throw std::invalid_argument("g_on must be positive");
    if (hrs_lrs_ratio <= 1.0)
      throw std::invalid_argument("HRS/LRS ratio must exceed 1");
    if (v_read_V <= 0.0) throw std::invalid_argument("v_read must be positive");
    if (discrete()) {
      const double g_off = g_off_S();
      const double tol = 1e-9 * g_on_S;
      if (std::abs(states_S.front() - g_off) > tol ||
          std::abs(states_S.back() - g_on_S) > tol)
        throw std::invalid_argument("discrete states must include g_off and g_on");
      for (std::size_t i = 0; i < states_S.size(); ++i) {
        if (states_S[i] < g_off - tol || states_S[i] > g_on_S + tol)
          throw std::invalid_argument("discrete state outside [g_off, g_on]");
        if (i > 0 && states_S[i] <= states_S[i - 1])
          throw std::invalid_argument("discrete states must be sorted ascending");
      }
    }
    if (rtn) rtn->validate();
  }

  /// Builds a discrete-state device from resistance levels (endpoints define
  /// g_on and the HRS/LRS ratio exactly).
  static DeviceModel from_resistance_levels(std::string name,
                                            const std::vector<double>& levels_ohm,
                                            double v_read_V) {
    DeviceModel model;
    model.name = std::move(name);
    model.v_read_V = v_read_V;
    double r_min = levels_ohm.front(), r_max = levels_ohm.front();
    for (double r : levels_ohm) {
      if (r <= 0.0) throw std::invalid_argument("resistance level must be positive");
      r_min = std::min(r_min, r);
      r_max = std::max(r_max, r);
    }
    model.g_on_S = 1.0 / r_min;
    model.hrs_lrs_ratio = r_max / r_min;
    model.states_S.clear();
    for (double r : levels_ohm) model.states_S.push_back(1.0 / r);
    std::sort(model.states_S.begin(), model.states_S.end());
    // Snap the endpoints so validate()'s identity holds exactly.
    model.states_S.front() = model.g_on_S / model.hrs_lrs_ratio;
    model.states_S.back() = model.g_on_S;
    model.validate();
    return model;
  }
};

/// Fractions of the programming-stage behaviour categories observed in a
/// device population, and the programming imprecision.
struct DevicePopulationSpec {
  double fraction_stuck_high = 0.0;
  double fraction_stuck_low = 0.0;
  double fraction_reduced_range = 0.0;
  double reduced_range_alpha = 0.6;  // g_hi ~ U(alpha*g_on, g_on)
  double sigma_prog = 0.0;           // relative programming noise (Gaussian)

  void validate() const {
    if (fraction_stuck_high < 0.0 || fraction_stuck_low < 0.0 ||
        fraction_reduced_range < 0.0)
      throw std::invalid_argument("population fractions must be non-negative");
    if (fraction_stuck_high + fraction_stuck_low + fraction_reduced_range > 1.0)
      throw std::invalid_argument("population fractions sum above 1");
    if (reduced_range_alpha <= 0.0 || reduced_range_alpha > 1.0)
      throw std::invalid_argument("reduced-range alpha outside (0,1]");
    if (sigma_prog < 0.0)
      throw std::invalid_argument("programming noise must be non-negative");
  }
};

/// Achievable conductance range per programmable cell; stuck cells have
/// g_lo == g_hi.
struct DevicePopulation {
  int rows = 0;
  int cols = 0;
  std::vector<double> g_lo;  // rows*cols, row-major
  std::vector<double> g_hi;

  [[nodiscard]] std::size_t index(int r, int c) const {
    return std::size_t(r) * cols + c;
  }
};

}  // namespace cmsim
