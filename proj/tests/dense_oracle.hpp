#pragma once

// Test-only reference solver: assembles KCL rows for every node of the tile
// circuit into a dense matrix and solves with a dense LU factorisation.
// Independent of the sparse production path; used to validate it.

#include <Eigen/Dense>

#include "cmsim/mapping.hpp"

namespace cmsim::testing {

struct OracleSolution {
  Eigen::MatrixXd v_word, v_bit;
  Eigen::VectorXd column_currents;
  Eigen::VectorXd source_currents;
};

inline OracleSolution dense_oracle(const ConductanceTile& tile,
                                   const Eigen::VectorXd& v_used) {
  const int rows = tile.geometry.rows, cols = tile.geometry.cols;
  const double rw = tile.geometry.r_word_ohm, rb = tile.geometry.r_bit_ohm;
  const bool word_unknown = rw > 0.0, bit_unknown = rb > 0.0;
  auto source = [&](int i) {
    const int k = i - tile.used_row_begin;
    return (k >= 0 && k < v_used.size()) ? v_used(k) : 0.0;
  };

  const int n_word = word_unknown ? rows * cols : 0;
  const int n = n_word + (bit_unknown ? rows * cols : 0);
  auto w_idx = [&](int i, int j) { return i * cols + j; };
  auto b_idx = [&](int i, int j) { return n_word + i * cols + j; };

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  if (word_unknown) {
    const double gw = 1.0 / rw;
    for (int i = 0; i < rows; ++i) {
      a(w_idx(i, 0), w_idx(i, 0)) += gw;
      b(w_idx(i, 0)) += gw * source(i);
      for (int j = 0; j + 1 < cols; ++j) {
        a(w_idx(i, j), w_idx(i, j)) += gw;
        a(w_idx(i, j + 1), w_idx(i, j + 1)) += gw;
        a(w_idx(i, j), w_idx(i, j + 1)) -= gw;
        a(w_idx(i, j + 1), w_idx(i, j)) -= gw;
      }
    }
  }
  if (bit_unknown) {
    const double gb = 1.0 / rb;
    for (int j = 0; j < cols; ++j) {
      for (int i = 0; i + 1 < rows; ++i) {
        a(b_idx(i, j), b_idx(i, j)) += gb;
        a(b_idx(i + 1, j), b_idx(i + 1, j)) += gb;
        a(b_idx(i, j), b_idx(i + 1, j)) -= gb;
        a(b_idx(i + 1, j), b_idx(i, j)) -= gb;
      }
      a(b_idx(rows - 1, j), b_idx(rows - 1, j)) += gb;
    }
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double g = tile.g(i, j);
      if (g == 0.0) continue;
      if (word_unknown && bit_unknown) {
        a(w_idx(i, j), w_idx(i, j)) += g;
        a(b_idx(i, j), b_idx(i, j)) += g;
        a(w_idx(i, j), b_idx(i, j)) -= g;
        a(b_idx(i, j), w_idx(i, j)) -= g;
      } else if (word_unknown) {
        a(w_idx(i, j), w_idx(i, j)) += g;  // bit side grounded
      } else if (bit_unknown) {
        a(b_idx(i, j), b_idx(i, j)) += g;
        b(b_idx(i, j)) += g * source(i);  // word side pinned at the source
      }
    }
  }
  Eigen::VectorXd x(n);
  if (n > 0) x = a.fullPivLu().solve(b);

  OracleSolution sol;
  sol.v_word.resize(rows, cols);
  sol.v_bit.resize(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      sol.v_word(i, j) = word_unknown ? x(w_idx(i, j)) : source(i);
      sol.v_bit(i, j) = bit_unknown ? x(b_idx(i, j)) : 0.0;
    }
  sol.column_currents = Eigen::VectorXd::Zero(cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i)
      sol.column_currents(j) +=
          tile.g(i, j) * (sol.v_word(i, j) - sol.v_bit(i, j));
  sol.source_currents = Eigen::VectorXd::Zero(rows);
  for (int i = 0; i < rows; ++i) {
    if (word_unknown) {
      sol.source_currents(i) = (source(i) - sol.v_word(i, 0)) / rw;
    } else {
      for (int j = 0; j < cols; ++j)
        sol.source_currents(i) += tile.g(i, j) * (source(i) - sol.v_bit(i, j));
    }
  }
  return sol;
}

}  // namespace cmsim::testing
