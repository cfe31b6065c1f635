#pragma once

// Fully connected feed-forward networks: sigmoid hidden layers, softmax
// output, cross-entropy loss, plain SGD with early stopping on validation
// accuracy. Weight matrices are (fan_in+1) x fan_out with the bias weights in
// the last row.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cmsim/mnist.hpp"
#include "cmsim/rng.hpp"

namespace cmsim {

struct Architecture {
  std::vector<int> layer_sizes;  // e.g. {784, 25, 10}

  [[nodiscard]] int num_synaptic_layers() const {
    return static_cast<int>(layer_sizes.size()) - 1;
  }
  void validate() const {
    if (layer_sizes.size() < 3)
      throw std::invalid_argument("architecture needs at least one hidden layer");
    for (int s : layer_sizes)
      if (s < 1) throw std::invalid_argument("architecture layer size < 1");
  }
};

struct NetworkParams {
  Architecture arch;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> weights;  // per layer, (fan_in+1) x fan_out
};

struct TrainConfig {
  double learning_rate = 0.01;
  int patience = 25;      // epochs without validation improvement before stop
  int batch_size = 32;
  int max_epochs = 1000;
  std::uint64_t shuffle_seed = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // -1 when training never ran
  double best_val_accuracy = 0.0;
};

/// Weights drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].
/// Deterministic in the seed.
inline NetworkParams init_network(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  NetworkParams net;
  net.arch = arch;
  net.seed = seed;
  Rng rng(derive_seed(seed, {rng_tag::kInit}));
  for (int layer = 0; layer < arch.num_synaptic_layers(); ++layer) {
    const int fan_in = arch.layer_sizes[layer];
    const int fan_out = arch.layer_sizes[layer + 1];
    const double bound = 1.0 / std::sqrt(double(fan_in));
    Eigen::MatrixXd w(fan_in + 1, fan_out);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
  }
  return net;
}

namespace detail {

inline void sigmoid_in_place(Eigen::MatrixXd& z) {
  z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

/// Column-wise numerically stable softmax.
inline void softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
}

/// Appends the bias activation 1.0 under X: (d x N) -> (d+1 x N).
inline Eigen::MatrixXd with_bias_row(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd xb(x.rows() + 1, x.cols());
  xb.topRows(x.rows()) = x;
  xb.row(x.rows()).setOnes();
  return xb;
}

}  // namespace detail

/// Forward pass for a batch of column-vector inputs (d x N); returns softmax
/// probabilities (10 x N).
inline Eigen::MatrixXd forward_batch(const NetworkParams& net,
                                     const Eigen::MatrixXd& x) {
  if (x.rows() != net.arch.layer_sizes.front())
    throw std::invalid_argument("forward: input dimension mismatch: got " +
                                std::to_string(x.rows()) + ", expected " +
                                std::to_string(net.arch.layer_sizes.front()));
  Eigen::MatrixXd act = x;
  const int n_layers = net.arch.num_synaptic_layers();
  for (int layer = 0; layer < n_layers; ++layer) {
    Eigen::MatrixXd z =
        net.weights[layer].transpose() * detail::with_bias_row(act);
    if (layer + 1 < n_layers)
      detail::sigmoid_in_place(z);
    else
      detail::softmax_columns(z);
    act = std::move(z);
  }
  return act;
}

inline Eigen::VectorXd forward(const NetworkParams& net,
                               const Eigen::VectorXd& input) {
  return forward_batch(net, input);
}

/// Mean cross-entropy loss and its gradients for one batch. Exposed so the
/// finite-difference tests can probe the same code path the trainer uses.
inline double loss_and_gradients(const NetworkParams& net,
                                 const Eigen::MatrixXd& x,
                                 const std::vector<int>& labels,
                                 std::vector<Eigen::MatrixXd>* grads) {
  const Eigen::Index n = x.cols();
  const int n_layers = net.arch.num_synaptic_layers();

  // Forward, keeping the biased activations of every layer input.
  std::vector<Eigen::MatrixXd> inputs_biased(n_layers);
  Eigen::MatrixXd act = x;
  for (int layer = 0; layer < n_layers; ++layer) {
    inputs_biased[layer] = detail::with_bias_row(act);
    Eigen::MatrixXd z = net.weights[layer].transpose() * inputs_biased[layer];
    if (layer + 1 < n_layers)
      detail::sigmoid_in_place(z);
    else
      detail::softmax_columns(z);
    act = std::move(z);
  }

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss -= std::log(std::max(act(labels[i], i),
                              std::numeric_limits<double>::min()));
  loss /= double(n);

  if (grads) {
    grads->assign(n_layers, Eigen::MatrixXd());
    // Softmax + cross-entropy: delta = (p - onehot) / n.
    Eigen::MatrixXd delta = act;
    for (Eigen::Index i = 0; i < n; ++i) delta(labels[i], i) -= 1.0;
    delta /= double(n);
    for (int layer = n_layers - 1; layer >= 0; --layer) {
      (*grads)[layer].noalias() = inputs_biased[layer] * delta.transpose();
      if (layer > 0) {
        const Eigen::MatrixXd& h =
            inputs_biased[layer];  // sigmoid outputs + bias row
        Eigen::MatrixXd back =
            net.weights[layer].topRows(net.weights[layer].rows() - 1) * delta;
        delta = back.array() *
                (h.topRows(h.rows() - 1).array() *
                 (1.0 - h.topRows(h.rows() - 1).array()));
      }
    }
  }
  return loss;
}

/// Fraction of items whose softmax argmax (ties -> lowest index) equals the
/// label.
inline double evaluate_accuracy(const NetworkParams& net, const LabeledSet& set) {
  if (set.size() == 0)
    throw std::invalid_argument("evaluate_accuracy: empty set");
  const Eigen::MatrixXd probs = forward_batch(net, set.inputs.transpose());
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    int best = 0;
    for (int k = 1; k < probs.rows(); ++k)
      if (probs(k, i) > probs(best, i)) best = k;
    if (best == set.labels[i]) ++correct;
  }
  return double(correct) / double(set.size());
}

/// SGD with early stopping: stops after `patience` consecutive epochs without
/// a strictly better validation accuracy and returns the best snapshot.
inline std::pair<NetworkParams, TrainHistory> train(
    const NetworkParams& initial, const LabeledSet& train_set,
    const LabeledSet& val_set, const TrainConfig& cfg) {
  if (train_set.size() == 0 || val_set.size() == 0)
    throw std::invalid_argument("train: empty training or validation set");
  if (cfg.learning_rate <= 0 || cfg.patience < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train: invalid config");

  NetworkParams net = initial;
  NetworkParams best = initial;
  TrainHistory history;
  Rng rng(derive_seed(cfg.shuffle_seed != 0 ? cfg.shuffle_seed : initial.seed,
                      {rng_tag::kShuffle}));

  const Eigen::Index n = train_set.size();
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;

  const Eigen::MatrixXd train_t = train_set.inputs.transpose();  // d x N
  std::vector<Eigen::MatrixXd> grads;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_below(std::uint64_t(i) + 1)]);

    double loss_sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd xb(train_t.rows(), b);
      std::vector<int> yb(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        xb.col(k) = train_t.col(order[start + k]);
        yb[k] = train_set.labels[order[start + k]];
      }
      const double loss = loss_and_gradients(net, xb, yb, &grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      loss_sum += loss * double(b);
      for (size_t layer = 0; layer < net.weights.size(); ++layer)
        net.weights[layer].noalias() -= cfg.learning_rate * grads[layer];
    }

    EpochStats stats;
    stats.train_loss = loss_sum / double(n);
    stats.val_accuracy = evaluate_accuracy(net, val_set);
    history.epochs.push_back(stats);

    if (stats.val_accuracy > history.best_val_accuracy) {
      history.best_val_accuracy = stats.val_accuracy;
      history.best_epoch = epoch;
      best = net;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }
  return {std::move(best), std::move(history)};
}

// --- Checkpoint file (versioned binary, little-endian) ---------------------
// Layout: magic "CMNC", u32 version, u64 seed, u32 n_sizes, u32 sizes[],
// then per synaptic layer: u32 rows, u32 cols, f64 data row-major.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const NetworkParams& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write("CMNC", 4);
  put_u32(kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&net.seed), 8);
  put_u32(static_cast<std::uint32_t>(net.arch.layer_sizes.size()));
  for (int s : net.arch.layer_sizes) put_u32(static_cast<std::uint32_t>(s));
  for (const auto& w : net.weights) {
    put_u32(static_cast<std::uint32_t>(w.rows()));
    put_u32(static_cast<std::uint32_t>(w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double v = w(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "CMNC")
    throw std::runtime_error("not a checkpoint file: " + path);
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path);
  NetworkParams net;
  in.read(reinterpret_cast<char*>(&net.seed), 8);
  const std::uint32_t n_sizes = get_u32();
  net.arch.layer_sizes.resize(n_sizes);
  for (auto& s : net.arch.layer_sizes) s = static_cast<int>(get_u32());
  net.arch.validate();
  for (int layer = 0; layer < net.arch.num_synaptic_layers(); ++layer) {
    const std::uint32_t rows = get_u32();
    const std::uint32_t cols = get_u32();
    Eigen::MatrixXd w(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), 8);
        w(i, j) = v;
      }
    net.weights.push_back(std::move(w));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return net;
}

}  // namespace cmsim
