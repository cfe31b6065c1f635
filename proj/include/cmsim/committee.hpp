#pragma once

// Ensemble-averaging committee machines over sets of (disturbed) networks,
// plus numerically optimised output weightings.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cmsim {

/// Per-member softmax outputs on a fixed evaluation set, with the identity of
/// each member (base network seed, disturbance iteration).
struct CommitteePool {
  struct MemberId {
    std::uint64_t base_seed = 0;
    int base_index = -1;
    int iteration = -1;
  };

  std::vector<Eigen::MatrixXd> outputs;  // per member: n_classes x n_items
  std::vector<MemberId> ids;

  [[nodiscard]] std::size_t members() const { return outputs.size(); }
  [[nodiscard]] Eigen::Index items() const {
    return outputs.empty() ? 0 : outputs.front().cols();
  }

  void validate() const {
    if (outputs.size() != ids.size())
      throw std::invalid_argument("pool: outputs/ids size mismatch");
    for (const auto& m : outputs)
      if (m.cols() != items() || m.rows() != outputs.front().rows())
        throw std::invalid_argument("pool: member output shape mismatch");
  }
};

/// Non-negative per-member weights summing to 1.
struct Weightings {
  Eigen::VectorXd alpha;

  void validate() const {
    if (alpha.size() == 0) throw std::invalid_argument("empty weightings");
    if (alpha.minCoeff() < 0.0)
      throw std::invalid_argument("weightings must be non-negative");
    if (std::abs(alpha.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("weightings must sum to 1");
  }

  static Weightings equal(std::size_t members) {
    Weightings w;
    w.alpha = Eigen::VectorXd::Constant(Eigen::Index(members),
                                        1.0 / double(members));
    return w;
  }
};

namespace detail {

inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int k = 1; k < v.size(); ++k)
    if (v(k) > v(best)) best = k;
  return best;
}

}  // namespace detail

/// Predictions of the weighted-average ensemble over a subset of members
/// (ties -> lowest class index).
inline std::vector<int> ensemble_predict_subset(
    const CommitteePool& pool, const std::vector<int>& members,
    const Weightings& weights) {
  if (members.empty()) throw std::invalid_argument("ensemble: empty committee");
  if (weights.alpha.size() != Eigen::Index(members.size()))
    throw std::invalid_argument("ensemble: weightings length mismatch");
  weights.validate();
  Eigen::MatrixXd avg = weights.alpha(0) * pool.outputs[members[0]];
  for (std::size_t k = 1; k < members.size(); ++k)
    avg.noalias() += weights.alpha(Eigen::Index(k)) * pool.outputs[members[k]];
  std::vector<int> pred(avg.cols());
  for (Eigen::Index i = 0; i < avg.cols(); ++i)
    pred[i] = detail::argmax_lowest(avg.col(i));
  return pred;
}

/// Predictions of the whole pool combined with the given weightings.
inline std::vector<int> ensemble_predict(const CommitteePool& pool,
                                         const Weightings& weights) {
  std::vector<int> all(pool.members());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = int(k);
  return ensemble_predict_subset(pool, all, weights);
}

inline double accuracy_of_predictions(const std::vector<int>& predictions,
                                      const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: predictions/labels length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return double(correct) / double(labels.size());
}

inline double committee_accuracy(const CommitteePool& pool,
                                 const Weightings& weights,
                                 const std::vector<int>& labels) {
  return accuracy_of_predictions(ensemble_predict(pool, weights), labels);
}

inline double committee_accuracy_subset(const CommitteePool& pool,
                                        const std::vector<int>& members,
                                        const Weightings& weights,
                                        const std::vector<int>& labels) {
  return accuracy_of_predictions(ensemble_predict_subset(pool, members, weights),
                                 labels);
}

/// Derivative-free coordinate search on the weight simplex, seeded at equal
/// weights and accepting only strict improvements of validation accuracy, so
/// the result is never worse than equal weighting. Step halves from 0.1 after
/// each sweep without progress; 200-sweep cap.
inline Weightings optimize_weightings(const CommitteePool& pool,
                                      const std::vector<int>& labels) {
  pool.validate();
  if (pool.members() == 0)
    throw std::invalid_argument("optimize_weightings: empty pool");
  Weightings best = Weightings::equal(pool.members());
  double best_acc = committee_accuracy(pool, best, labels);

  double step = 0.1;
  for (int sweep = 0; sweep < 200 && step >= 1e-4; ++sweep) {
    bool improved = false;
    for (std::size_t k = 0; k < pool.members(); ++k) {
      for (double direction : {+1.0, -1.0}) {
        Weightings cand = best;
        cand.alpha(Eigen::Index(k)) =
            std::max(0.0, cand.alpha(Eigen::Index(k)) + direction * step);
        const double total = cand.alpha.sum();
        if (total <= 0.0) continue;
        cand.alpha /= total;
        const double acc = committee_accuracy(pool, cand, labels);
        if (acc > best_acc) {
          best = cand;
          best_acc = acc;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

}  // namespace cmsim
