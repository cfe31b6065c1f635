#pragma once

// Weight-to-conductance mapping: p_L clipping, proportional mapping onto
// positive/negative device pairs, discrete-state quantisation, tiling onto
// fixed-geometry crossbars, and intensity-aware input reordering.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cmsim/dense_net.hpp"
#include "cmsim/device.hpp"
#include "cmsim/mnist.hpp"

namespace cmsim {

struct CrossbarGeometry {
  int rows = 128;  // word lines
  int cols = 64;   // bit lines
  double r_word_ohm = 0.0;  // interconnect resistance per word-line segment
  double r_bit_ohm = 0.0;   // per bit-line segment

  void validate() const {
    if (rows < 1 || cols < 1)
      throw std::invalid_argument("crossbar geometry needs rows, cols >= 1");
    if (r_word_ohm < 0.0 || r_bit_ohm < 0.0)
      throw std::invalid_argument("interconnect resistance must be >= 0");
  }
};

struct ColumnRole {
  enum class Kind { Unused, Positive, Negative };
  Kind kind = Kind::Unused;
  int output = -1;  // output-neuron index for Positive/Negative columns
};

/// One crossbar's conductance matrix with its used-region metadata. Rows
/// outside [used_row_begin, rows) and columns with role Unused hold exactly 0
/// (unelectroformed devices). row_map[k] is the global input index carried by
/// physical row used_row_begin + k.
struct ConductanceTile {
  CrossbarGeometry geometry;
  Eigen::MatrixXd g;  // rows x cols, siemens; 0 = unelectroformed
  int used_row_begin = 0;
  std::vector<int> row_map;
  std::vector<ColumnRole> column_roles;

  [[nodiscard]] int used_rows() const { return geometry.rows - used_row_begin; }
};

/// Mapping parameters: the weight bound selected by p_L clipping and the
/// descale factor that converts differential current back to a weighted sum.
struct MappingSpec {
  double p_L = 0.0;
  double w_max = 0.0;
  DeviceModel device;

  /// Amps per unit weighted-sum: c = g_on * v_read / w_max.
  [[nodiscard]] double descale() const {
    return device.g_on_S * device.v_read_V / w_max;
  }
  void validate() const {
    if (p_L < 0.0 || p_L >= 1.0) throw std::invalid_argument("p_L outside [0,1)");
    if (w_max <= 0.0) throw std::invalid_argument("w_max must be positive");
    device.validate();
  }
};

/// Weight bound after excluding the proportion p_L of largest-magnitude
/// weights: with a_1 <= ... <= a_N the sorted |w|, returns a_{N - ceil(p_L*N)}.
inline double compute_wmax(const std::vector<double>& abs_weights, double p_L) {
  if (p_L < 0.0 || p_L >= 1.0)
    throw std::invalid_argument("p_L outside [0,1)");
  if (abs_weights.empty())
    throw std::invalid_argument("compute_wmax: no weights");
  std::vector<double> sorted;
  sorted.reserve(abs_weights.size());
  for (double a : abs_weights) sorted.push_back(std::abs(a));
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t excluded =
      static_cast<std::size_t>(std::ceil(p_L * double(n)));
  if (excluded >= n)
    throw std::runtime_error("degenerate network: p_L excludes every weight");
  const double w_max = sorted[n - excluded - 1];
  if (w_max <= 0.0)
    throw std::runtime_error("degenerate network: all retained weights are zero");
  return w_max;
}

inline double compute_wmax(const std::vector<Eigen::MatrixXd>& weights,
                           double p_L) {
  std::vector<double> flat;
  std::size_t total = 0;
  for (const auto& w : weights) total += std::size_t(w.size());
  flat.reserve(total);
  for (const auto& w : weights)
    for (Eigen::Index i = 0; i < w.size(); ++i)
      flat.push_back(std::abs(w.data()[i]));
  return compute_wmax(flat, p_L);
}

/// Nearest member of {0} union states by absolute conductance difference;
/// exact ties resolve to the lower conductance.
inline double quantize(double g_target, const DeviceModel& device) {
  if (g_target < 0.0)
    throw std::invalid_argument("quantize: negative conductance target");
  if (!device.discrete())
    throw std::invalid_argument("quantize: device has continuous states");
  double best = 0.0;
  double best_d = g_target;  // distance to the 0 candidate
  for (double s : device.states_S) {
    const double d = std::abs(g_target - s);
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  return best;
}

namespace detail {

/// Clamps a positive conductance target into the achievable set: targets in
/// (0, g_off) move up to g_off, targets above g_on down to g_on; discrete
/// devices then quantize.
inline double clamp_to_allowed(double target, const DeviceModel& device) {
  if (target <= 0.0) return 0.0;
  double g = std::min(target, device.g_on_S);
  g = std::max(g, device.g_off_S());
  if (device.discrete()) g = quantize(g, device);
  return g;
}

}  // namespace detail

/// Proportional mapping of one synaptic layer onto positive/negative
/// conductance pairs: |w| maps to (|w_clipped|/w_max)*g_on on the device of
/// the matching sign, the paired device stays unelectroformed.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> map_layer(
    const Eigen::MatrixXd& weights, const MappingSpec& spec) {
  spec.validate();
  Eigen::MatrixXd g_pos = Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
  Eigen::MatrixXd g_neg = g_pos;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      const double w = weights(i, j);
      if (w == 0.0) continue;
      const double clipped = std::min(std::abs(w), spec.w_max);
      const double target = clipped / spec.w_max * spec.device.g_on_S;
      const double g = detail::clamp_to_allowed(target, spec.device);
      (w > 0.0 ? g_pos : g_neg)(i, j) = g;
    }
  }
  return {std::move(g_pos), std::move(g_neg)};
}

/// Row counts when splitting M inputs over ceil(M/R) crossbars as evenly as
/// possible, larger tiles first (785 rows on 128-row crossbars gives
/// [113, 112, 112, 112, 112, 112, 112]).
inline std::vector<int> tile_row_counts(int n_inputs, int rows) {
  const int n_tiles = (n_inputs + rows - 1) / rows;
  const int base = n_inputs / n_tiles;
  const int remainder = n_inputs % n_tiles;
  std::vector<int> counts(n_tiles, base);
  for (int t = 0; t < remainder; ++t) counts[t] += 1;
  return counts;
}

/// Splits a mapped layer over fixed-geometry crossbars. Used rows sit at the
/// sense-adjacent (bottom) edge; output k occupies columns (2k, 2k+1) as
/// (positive, negative). Input slots are enumerated bottom-up within each
/// tile, first tile first; slot s carries input permutation[s] (or s).
inline std::vector<ConductanceTile> tile_layer(
    const Eigen::MatrixXd& g_pos, const Eigen::MatrixXd& g_neg,
    const CrossbarGeometry& geometry,
    const std::vector<int>* permutation = nullptr) {
  geometry.validate();
  if (g_pos.rows() != g_neg.rows() || g_pos.cols() != g_neg.cols())
    throw std::invalid_argument("tile_layer: mismatched G_pos/G_neg shapes");
  const int n_inputs = static_cast<int>(g_pos.rows());
  const int fan_out = static_cast<int>(g_pos.cols());
  if (2 * fan_out > geometry.cols)
    throw std::invalid_argument(
        "tile_layer: fan_out too wide for geometry: needs " +
        std::to_string(2 * fan_out) + " bit lines, crossbar has " +
        std::to_string(geometry.cols));
  if (permutation && static_cast<int>(permutation->size()) != n_inputs)
    throw std::invalid_argument("tile_layer: permutation length mismatch");

  const std::vector<int> counts = tile_row_counts(n_inputs, geometry.rows);
  std::vector<ConductanceTile> tiles(counts.size());

  int slot = 0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    ConductanceTile& tile = tiles[t];
    tile.geometry = geometry;
    tile.g = Eigen::MatrixXd::Zero(geometry.rows, geometry.cols);
    tile.used_row_begin = geometry.rows - counts[t];
    tile.row_map.assign(counts[t], -1);
    tile.column_roles.assign(geometry.cols, ColumnRole{});
    for (int k = 0; k < fan_out; ++k) {
      tile.column_roles[2 * k] = {ColumnRole::Kind::Positive, k};
      tile.column_roles[2 * k + 1] = {ColumnRole::Kind::Negative, k};
    }
    for (int offset = 0; offset < counts[t]; ++offset, ++slot) {
      const int input = permutation ? (*permutation)[slot] : slot;
      const int row = geometry.rows - 1 - offset;
      tile.row_map[row - tile.used_row_begin] = input;
      for (int k = 0; k < fan_out; ++k) {
        tile.g(row, 2 * k) = g_pos(input, k);
        tile.g(row, 2 * k + 1) = g_neg(input, k);
      }
    }
  }
  return tiles;
}

/// Permutation placing inputs in descending mean intensity at word lines of
/// increasing distance from the sense edge: slot 0 (the bottom-most used word
/// line of the first tile) receives the highest-intensity input. Ties keep
/// the lower original index first.
inline std::vector<int> intensity_permutation(const IntensityProfile& profile) {
  std::vector<int> order(profile.means.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return profile.means(a) > profile.means(b);
  });
  return order;
}

/// A network mapped onto crossbar tiles, one tile list per synaptic layer.
struct MappedLayer {
  std::vector<ConductanceTile> tiles;
  MappingSpec spec;
  int fan_out = 0;
};

struct MappedNetwork {
  std::vector<MappedLayer> layers;
  std::uint64_t base_seed = 0;
};

struct MapOptions {
  double p_L = 0.0;
  bool per_layer_wmax = false;
  /// Geometry for every tile; when absent each layer gets a single
  /// zero-resistance crossbar sized to fit it exactly.
  std::optional<CrossbarGeometry> geometry;
  /// Optional input ordering for the first synaptic layer (from
  /// intensity_permutation); later layers keep their natural order.
  std::optional<std::vector<int>> input_permutation;
};

/// Full network mapping: w_max selection, proportional mapping, quantisation
/// and tiling.
inline MappedNetwork map_network(const NetworkParams& net,
                                 const DeviceModel& device,
                                 const MapOptions& options) {
  MappedNetwork mapped;
  mapped.base_seed = net.seed;
  double global_wmax = 0.0;
  if (!options.per_layer_wmax) global_wmax = compute_wmax(net.weights, options.p_L);

  for (std::size_t layer = 0; layer < net.weights.size(); ++layer) {
    const Eigen::MatrixXd& w = net.weights[layer];
    MappedLayer ml;
    ml.fan_out = static_cast<int>(w.cols());
    ml.spec.p_L = options.p_L;
    ml.spec.device = device;
    ml.spec.w_max = options.per_layer_wmax
                        ? compute_wmax({w}, options.p_L)
                        : global_wmax;
    auto [g_pos, g_neg] = map_layer(w, ml.spec);

    CrossbarGeometry geom;
    if (options.geometry) {
      geom = *options.geometry;
    } else {
      geom.rows = static_cast<int>(w.rows());
      geom.cols = 2 * ml.fan_out;
      geom.r_word_ohm = 0.0;
      geom.r_bit_ohm = 0.0;
    }
    const std::vector<int>* perm = nullptr;
    if (layer == 0 && options.input_permutation)
      perm = &*options.input_permutation;
    ml.tiles = tile_layer(g_pos, g_neg, geom, perm);
    mapped.layers.push_back(std::move(ml));
  }
  return mapped;
}

}  // namespace cmsim
