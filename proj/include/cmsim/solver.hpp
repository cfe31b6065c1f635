#pragma once

// Crossbar output currents, either ideally (I = sum g*V) or with line
// resistance via nodal analysis of the full resistive network.
//
// Circuit model (fixed contract): the source V_i drives word line i through
// one r_word segment at the LEFT edge; consecutive word-line nodes are joined
// by r_word; device g_ij joins W(i,j) to B(i,j); consecutive bit-line nodes
// are joined by r_bit; bit line j is grounded through one r_bit segment at
// the BOTTOM edge (ideal sense), and the output current is the current
// through that final segment. Unused word lines are driven at 0 V. A zero
// r_word (r_bit) collapses the word (bit) nodes onto the source (ground)
// potentials exactly.

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "cmsim/mapping.hpp"

namespace cmsim {

/// Currents per bit line for the zero-line-resistance limit: I_j = sum_i
/// g_ij * V_i over the used rows. Voltages align with row_map order.
inline Eigen::VectorXd ideal_tile_currents(const ConductanceTile& tile,
                                           const Eigen::VectorXd& voltages) {
  if (voltages.size() != tile.used_rows())
    throw std::invalid_argument("ideal_tile_currents: voltage count " +
                                std::to_string(voltages.size()) +
                                " != used rows " +
                                std::to_string(tile.used_rows()));
  return tile.g.bottomRows(tile.used_rows()).transpose() * voltages;
}

inline Eigen::MatrixXd ideal_tile_currents_batch(const ConductanceTile& tile,
                                                 const Eigen::MatrixXd& v) {
  if (v.rows() != tile.used_rows())
    throw std::invalid_argument("ideal_tile_currents: voltage count mismatch");
  return tile.g.bottomRows(tile.used_rows()).transpose() * v;
}

struct NodalOptions {
  /// Absolute KCL residual tolerance on currents; the contract also allows
  /// 1e-9 relative to the total input current, whichever is larger.
  double residual_abs_A = 1e-10;
};

struct NodalSolution {
  Eigen::VectorXd column_currents;  // per bit line (A)
  Eigen::MatrixXd v_word;           // rows x cols node voltages (V)
  Eigen::MatrixXd v_bit;
  double max_kcl_residual_A = 0.0;
};

/// Nodal solver for one tile. The conductance matrix depends only on the tile,
/// so the factorisation is computed once and reused across input vectors.
class TileNodalSolver {
 public:
  explicit TileNodalSolver(const ConductanceTile& tile, NodalOptions options = {})
      : tile_(tile), options_(options) {
    tile.geometry.validate();
    rows_ = tile.geometry.rows;
    cols_ = tile.geometry.cols;
    if (tile.g.cwiseAbs().sum() == 0.0)
      throw std::runtime_error("nodal solve: tile has no electroformed devices");
    word_unknown_ = tile.geometry.r_word_ohm > 0.0;
    bit_unknown_ = tile.geometry.r_bit_ohm > 0.0;
    if (word_unknown_ || bit_unknown_) assemble();
  }

  [[nodiscard]] bool reduces_to_ideal() const {
    return !word_unknown_ && !bit_unknown_;
  }

  /// Column currents for a batch of voltage vectors (used_rows x N).
  Eigen::MatrixXd solve_currents(const Eigen::MatrixXd& v_used) const {
    if (v_used.rows() != tile_.used_rows())
      throw std::invalid_argument("nodal solve: voltage count mismatch");
    if (reduces_to_ideal())
      return ideal_tile_currents_batch(tile_, v_used);
    Eigen::MatrixXd currents;
    solve_nodes(v_used, &currents);
    return currents;
  }

  /// Full solution (node voltages and residual) for one voltage vector.
  NodalSolution solve(const Eigen::VectorXd& v_used) const {
    if (v_used.size() != tile_.used_rows())
      throw std::invalid_argument("nodal solve: voltage count mismatch");
    NodalSolution sol;
    sol.v_word.resize(rows_, cols_);
    sol.v_bit.resize(rows_, cols_);
    if (reduces_to_ideal()) {
      sol.column_currents = ideal_tile_currents(tile_, v_used);
      for (int i = 0; i < rows_; ++i)
        sol.v_word.row(i).setConstant(source_voltage(i, v_used));
      sol.v_bit.setZero();
      return sol;
    }
    Eigen::MatrixXd currents;
    const Eigen::MatrixXd x = solve_nodes(v_used, &currents);
    sol.column_currents = currents.col(0);
    sol.max_kcl_residual_A =
        (matrix_ * x - injection_ * v_used).cwiseAbs().maxCoeff();
    for (int i = 0; i < rows_; ++i) {
      const double vi = source_voltage(i, v_used);
      for (int j = 0; j < cols_; ++j) {
        sol.v_word(i, j) = word_unknown_ ? x(idx_word(i, j), 0) : vi;
        sol.v_bit(i, j) = bit_unknown_ ? x(idx_bit(i, j), 0) : 0.0;
      }
    }
    return sol;
  }

 private:
  [[nodiscard]] int idx_word(int i, int j) const { return i * cols_ + j; }
  [[nodiscard]] int idx_bit(int i, int j) const {
    return (word_unknown_ ? rows_ * cols_ : 0) + i * cols_ + j;
  }

  [[nodiscard]] double source_voltage(int row, const Eigen::VectorXd& v) const {
    const int k = row - tile_.used_row_begin;
    return (k >= 0 && k < v.size()) ? v(k) : 0.0;
  }

  void assemble() {
    const double gw = word_unknown_ ? 1.0 / tile_.geometry.r_word_ohm : 0.0;
    const double gb = bit_unknown_ ? 1.0 / tile_.geometry.r_bit_ohm : 0.0;
    const int n = (word_unknown_ ? rows_ * cols_ : 0) +
                  (bit_unknown_ ? rows_ * cols_ : 0);
    std::vector<Eigen::Triplet<double>> trips;
    std::vector<Eigen::Triplet<double>> inj;      // rhs = inj * v_used
    std::vector<Eigen::Triplet<double>> extract;  // currents = extract * x
    trips.reserve(std::size_t(n) * 6);

    auto add_sym = [&](int a, int b, double g) {
      trips.emplace_back(a, a, g);
      trips.emplace_back(b, b, g);
      trips.emplace_back(a, b, -g);
      trips.emplace_back(b, a, -g);
    };

    for (int i = 0; i < rows_; ++i) {
      const int used_k = i - tile_.used_row_begin;
      if (word_unknown_) {
        // Source boundary segment at the left edge.
        trips.emplace_back(idx_word(i, 0), idx_word(i, 0), gw);
        if (used_k >= 0) inj.emplace_back(idx_word(i, 0), used_k, gw);
        for (int j = 0; j + 1 < cols_; ++j)
          add_sym(idx_word(i, j), idx_word(i, j + 1), gw);
      }
      for (int j = 0; j < cols_; ++j) {
        const double g = tile_.g(i, j);
        if (g == 0.0) continue;
        if (word_unknown_ && bit_unknown_) {
          add_sym(idx_word(i, j), idx_bit(i, j), g);
        } else if (word_unknown_) {  // bit nodes grounded: I_j = sum g*W(i,j)
          trips.emplace_back(idx_word(i, j), idx_word(i, j), g);
          extract.emplace_back(j, idx_word(i, j), g);
        } else {  // word nodes pinned at the source voltages
          trips.emplace_back(idx_bit(i, j), idx_bit(i, j), g);
          if (used_k >= 0) inj.emplace_back(idx_bit(i, j), used_k, g);
        }
      }
    }
    if (bit_unknown_) {
      for (int j = 0; j < cols_; ++j) {
        for (int i = 0; i + 1 < rows_; ++i)
          add_sym(idx_bit(i, j), idx_bit(i + 1, j), gb);
        // Ground boundary segment at the bottom edge; the output current is
        // gb * v_bit(rows-1, j).
        trips.emplace_back(idx_bit(rows_ - 1, j), idx_bit(rows_ - 1, j), gb);
        extract.emplace_back(j, idx_bit(rows_ - 1, j), gb);
      }
    }

    matrix_.resize(n, n);
    matrix_.setFromTriplets(trips.begin(), trips.end());
    injection_.resize(n, tile_.used_rows());
    injection_.setFromTriplets(inj.begin(), inj.end());
    extract_.resize(cols_, n);
    extract_.setFromTriplets(extract.begin(), extract.end());

    factor_ =
        std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    factor_->compute(matrix_);
    if (factor_->info() != Eigen::Success)
      throw std::runtime_error(
          "nodal solve: factorisation failed (singular system)");
  }

  /// Solves the nodal system for a batch of inputs and checks the KCL
  /// residual against max(residual_abs, 1e-9 * total output current),
  /// refining once before giving up.
  Eigen::MatrixXd solve_nodes(const Eigen::MatrixXd& v_used,
                              Eigen::MatrixXd* currents) const {
    const Eigen::MatrixXd rhs = injection_ * v_used;
    Eigen::MatrixXd x = factor_->solve(rhs);
    for (int attempt = 0;; ++attempt) {
      const Eigen::MatrixXd residual = matrix_ * x - rhs;
      *currents = extract_ * x;
      bool ok = true;
      for (Eigen::Index c = 0; c < rhs.cols() && ok; ++c) {
        const double tol = std::max(options_.residual_abs_A,
                                    1e-9 * currents->col(c).cwiseAbs().sum());
        ok = residual.col(c).cwiseAbs().maxCoeff() <= tol;
      }
      if (ok) return x;
      if (attempt >= 1)
        throw std::runtime_error("nodal solve: KCL residual above tolerance");
      x -= factor_->solve(residual);
    }
  }

  ConductanceTile tile_;
  NodalOptions options_;
  int rows_ = 0, cols_ = 0;
  bool word_unknown_ = false, bit_unknown_ = false;
  Eigen::SparseMatrix<double> matrix_;
  Eigen::SparseMatrix<double> injection_;
  Eigen::SparseMatrix<double> extract_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> factor_;
};

/// One-shot nodal solve of a tile.
inline NodalSolution solve_tile_nodal(const ConductanceTile& tile,
                                      const Eigen::VectorXd& voltages,
                                      NodalOptions options = {}) {
  return TileNodalSolver(tile, options).solve(voltages);
}

enum class SolveMode { Ideal, Nodal };

/// Reconstructed weighted sums and raw per-tile currents of one layer for one
/// activation vector.
struct LayerOutputs {
  Eigen::VectorXd reconstructed;               // fan_out, dimensionless
  std::vector<Eigen::VectorXd> tile_currents;  // per tile, per bit line (A)
};

namespace detail {

inline void check_activations(const Eigen::MatrixXd& x) {
  if (x.size() == 0) return;
  if (x.minCoeff() < -1e-12 || x.maxCoeff() > 1.0 + 1e-12)
    throw std::invalid_argument("layer activations outside [0,1]");
}

}  // namespace detail

/// Repeated-inference engine for one mapped layer: nodal factorisations are
/// built once per tile and reused for every input.
class LayerEvaluator {
 public:
  LayerEvaluator(const MappedLayer& layer, SolveMode mode,
                 NodalOptions options = {})
      : layer_(&layer), mode_(mode) {
    if (mode_ == SolveMode::Nodal)
      for (const auto& tile : layer.tiles)
        solvers_.push_back(std::make_shared<TileNodalSolver>(tile, options));
  }

  /// Differential currents decoded to weighted sums: (fan_out x N).
  Eigen::MatrixXd reconstructed(const Eigen::MatrixXd& activations) const {
    Eigen::MatrixXd sums =
        Eigen::MatrixXd::Zero(layer_->fan_out, activations.cols());
    accumulate(activations, &sums, nullptr);
    return sums / layer_->spec.descale();
  }

  /// Per-tile raw bit-line currents (cols x N each), plus the decoded sums.
  Eigen::MatrixXd reconstructed_with_currents(
      const Eigen::MatrixXd& activations,
      std::vector<Eigen::MatrixXd>* tile_currents) const {
    Eigen::MatrixXd sums =
        Eigen::MatrixXd::Zero(layer_->fan_out, activations.cols());
    accumulate(activations, &sums, tile_currents);
    return sums / layer_->spec.descale();
  }

 private:
  void accumulate(const Eigen::MatrixXd& activations, Eigen::MatrixXd* sums,
                  std::vector<Eigen::MatrixXd>* currents_out) const {
    detail::check_activations(activations);
    const double v_read = layer_->spec.device.v_read_V;
    if (currents_out) currents_out->clear();
    for (std::size_t t = 0; t < layer_->tiles.size(); ++t) {
      const ConductanceTile& tile = layer_->tiles[t];
      Eigen::MatrixXd v(tile.used_rows(), activations.cols());
      for (int k = 0; k < tile.used_rows(); ++k)
        v.row(k) = activations.row(tile.row_map[k]) * v_read;
      Eigen::MatrixXd currents = mode_ == SolveMode::Ideal
                                     ? ideal_tile_currents_batch(tile, v)
                                     : solvers_[t]->solve_currents(v);
      for (int j = 0; j < tile.geometry.cols; ++j) {
        const ColumnRole& role = tile.column_roles[j];
        if (role.kind == ColumnRole::Kind::Positive)
          sums->row(role.output) += currents.row(j);
        else if (role.kind == ColumnRole::Kind::Negative)
          sums->row(role.output) -= currents.row(j);
      }
      if (currents_out) currents_out->push_back(std::move(currents));
    }
  }

  const MappedLayer* layer_;
  SolveMode mode_;
  std::vector<std::shared_ptr<TileNodalSolver>> solvers_;
};

/// LayerOutputs for a single activation vector (length = sum of used rows).
inline LayerOutputs layer_outputs(const MappedLayer& layer,
                                  const Eigen::VectorXd& activations,
                                  SolveMode mode, NodalOptions options = {}) {
  LayerEvaluator eval(layer, mode, options);
  std::vector<Eigen::MatrixXd> currents;
  const Eigen::MatrixXd sums =
      eval.reconstructed_with_currents(activations, &currents);
  LayerOutputs out;
  out.reconstructed = sums.col(0);
  for (auto& c : currents) out.tile_currents.push_back(c.col(0));
  return out;
}

/// Whole-network inference engine over mapped tiles: layer sums pass through
/// the digital sigmoid, gain a bias entry, feed the next layer's crossbars,
/// and finish with softmax (or raw sums when apply_softmax is off, for
/// pre-softmax ensemble averaging).
class NetworkEvaluator {
 public:
  NetworkEvaluator(const MappedNetwork& mapped, SolveMode mode,
                   NodalOptions options = {}, Eigen::Index chunk = 256,
                   bool apply_softmax = true)
      : chunk_(chunk), apply_softmax_(apply_softmax) {
    for (const auto& layer : mapped.layers)
      layers_.emplace_back(layer, mode, options);
  }

  /// Softmax probabilities (10 x N) for raw inputs (784 x N).
  Eigen::MatrixXd infer(const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd out;
    for (Eigen::Index start = 0; start < inputs.cols(); start += chunk_) {
      const Eigen::Index n = std::min(chunk_, inputs.cols() - start);
      Eigen::MatrixXd act = inputs.middleCols(start, n);
      for (std::size_t layer = 0; layer < layers_.size(); ++layer) {
        Eigen::MatrixXd sums =
            layers_[layer].reconstructed(detail::with_bias_row(act));
        if (layer + 1 < layers_.size())
          detail::sigmoid_in_place(sums);
        else if (apply_softmax_)
          detail::softmax_columns(sums);
        act = std::move(sums);
      }
      if (out.size() == 0) out.resize(act.rows(), inputs.cols());
      out.middleCols(start, n) = act;
    }
    return out;
  }

  /// Fraction of argmax matches (ties -> lowest index).
  double accuracy(const LabeledSet& set) const {
    const Eigen::MatrixXd probs = infer(set.inputs.transpose());
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < probs.cols(); ++i) {
      int best = 0;
      for (int k = 1; k < probs.rows(); ++k)
        if (probs(k, i) > probs(best, i)) best = k;
      if (best == set.labels[i]) ++correct;
    }
    return double(correct) / double(set.size());
  }

 private:
  std::vector<LayerEvaluator> layers_;
  Eigen::Index chunk_;
  bool apply_softmax_;
};

/// Softmax probabilities for one input vector.
inline Eigen::VectorXd network_inference(const MappedNetwork& mapped,
                                         const Eigen::VectorXd& input,
                                         SolveMode mode,
                                         NodalOptions options = {}) {
  return NetworkEvaluator(mapped, mode, options).infer(input);
}

/// Mean relative current change (I_nodal - I_ideal) / I_ideal per (tile, used
/// column), averaged over the sample; inputs with |I_ideal| < 1e-12 A are
/// excluded per cell. Cells with no valid sample at all yield NaN; if every
/// cell is excluded the sample is degenerate.
inline Eigen::MatrixXd deviation_heatmap(const MappedLayer& layer,
                                         const Eigen::MatrixXd& activations,
                                         NodalOptions options = {}) {
  if (activations.cols() == 0)
    throw std::invalid_argument("deviation_heatmap: empty sample");
  const int used_cols = 2 * layer.fan_out;
  const double v_read = layer.spec.device.v_read_V;
  Eigen::MatrixXd mean =
      Eigen::MatrixXd::Constant(Eigen::Index(layer.tiles.size()), used_cols,
                                std::numeric_limits<double>::quiet_NaN());
  bool any_valid = false;
  for (std::size_t t = 0; t < layer.tiles.size(); ++t) {
    const ConductanceTile& tile = layer.tiles[t];
    TileNodalSolver solver(tile, options);
    Eigen::MatrixXd v(tile.used_rows(), activations.cols());
    for (int k = 0; k < tile.used_rows(); ++k)
      v.row(k) = activations.row(tile.row_map[k]) * v_read;
    const Eigen::MatrixXd nodal = solver.solve_currents(v);
    const Eigen::MatrixXd ideal = ideal_tile_currents_batch(tile, v);
    for (int j = 0; j < used_cols; ++j) {
      double sum = 0.0;
      Eigen::Index count = 0;
      for (Eigen::Index i = 0; i < activations.cols(); ++i) {
        if (std::abs(ideal(j, i)) < 1e-12) continue;
        sum += (nodal(j, i) - ideal(j, i)) / ideal(j, i);
        ++count;
      }
      if (count > 0) {
        mean(Eigen::Index(t), j) = sum / double(count);
        any_valid = true;
      }
    }
  }
  if (!any_valid)
    throw std::runtime_error("deviation_heatmap: every entry excluded");
  return mean;
}

}  // namespace cmsim
