#pragma once

// Experiment orchestration: the base-network / disturbance-iteration /
// committee-sampling loop, deterministic in the master seed, with results
// persisted as line-delimited JSON records plus CSV summaries.

#include <atomic>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cmsim/committee.hpp"
#include "cmsim/dense_net.hpp"
#include "cmsim/formats.hpp"
#include "cmsim/mapping.hpp"
#include "cmsim/mnist.hpp"
#include "cmsim/nonideal.hpp"
#include "cmsim/rng.hpp"
#include "cmsim/solver.hpp"
#include "cmsim/stats.hpp"

namespace cmsim {

namespace rng_tag {
inline constexpr std::uint64_t kBaseNet = 8;
}  // namespace rng_tag

/// Devices needed to implement the architecture with conductance pairs:
/// 2 * sum over layers of (fan_in + 1) * fan_out.
inline long long memristor_count(const Architecture& arch) {
  arch.validate();
  long long total = 0;
  for (int layer = 0; layer < arch.num_synaptic_layers(); ++layer)
    total += 2LL * (arch.layer_sizes[layer] + 1) * arch.layer_sizes[layer + 1];
  return total;
}

/// n_samples subsets of size k drawn uniformly from {0..pool_size-1}, each
/// without replacement within the subset; members sorted ascending.
inline std::vector<std::vector<int>> sample_combinations(int pool_size, int k,
                                                         int n_samples,
                                                         Rng& rng) {
  if (k < 1 || k > pool_size)
    throw std::invalid_argument("sample_combinations: k outside [1, pool]");
  std::vector<int> indices(pool_size);
  std::vector<std::vector<int>> samples;
  samples.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < pool_size; ++i) indices[i] = i;
    for (int j = 0; j < k; ++j) {
      const int pick =
          j + static_cast<int>(rng.uniform_below(std::uint64_t(pool_size - j)));
      std::swap(indices[j], indices[pick]);
    }
    std::vector<int> subset(indices.begin(), indices.begin() + k);
    std::sort(subset.begin(), subset.end());
    samples.push_back(std::move(subset));
  }
  return samples;
}

/// Runs fn(0..n_tasks-1) over a fixed-size worker pool. The first exception
/// wins; remaining tasks are abandoned.
inline void parallel_for(int n_tasks, int n_threads,
                         const std::function<void(int)>& fn) {
  if (n_tasks <= 0) return;
  n_threads = std::max(1, std::min(n_threads, n_tasks));
  if (n_threads == 1) {
    for (int i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const int i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct RunPaths {
  std::string out_dir;
  std::string checkpoint_dir;  // reused across runs; trained nets cached here
  int threads = int(std::thread::hardware_concurrency());
};

struct ExperimentResult {
  std::vector<json> records;
  std::vector<double> digital_accuracies;
  std::vector<double> mapped_accuracies;
  std::vector<double> individual_accuracies;
  // committee accuracies keyed by committee size
  std::map<int, std::vector<double>> committee_accuracies;
  PoolFile test_pool;
  PoolFile validation_pool;
};

namespace detail {

inline std::string checkpoint_name(const ExperimentConfig& config, int index,
                                   std::uint64_t seed) {
  std::uint64_t key = derive_seed(
      seed, {std::uint64_t(config.training.patience),
             std::uint64_t(config.training.batch_size),
             std::uint64_t(config.training.max_epochs),
             std::uint64_t(config.n_train), config.shuffled_split ? 1ull : 0ull,
             std::bit_cast<std::uint64_t>(config.training.learning_rate)});
  std::ostringstream name;
  name << "net_h" << config.hidden << "_i" << index << "_" << std::hex << key
       << ".cmnc";
  return name.str();
}

inline int classify(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  int best = 0;
  for (int k = 1; k < probs.size(); ++k)
    if (probs(k) > probs(best)) best = k;
  return best;
}

inline double accuracy_of_outputs(const Eigen::MatrixXd& outputs,
                                  const std::vector<int>& labels) {
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < outputs.cols(); ++i)
    if (classify(outputs.col(i)) == labels[i]) ++correct;
  return double(correct) / double(outputs.cols());
}

}  // namespace detail

struct SummaryRow {
  std::string group;  // digital | mapped | individual | committee
  int size = 0;       // committee size; 0 for non-committee groups
  std::size_t count = 0;
  SummaryStats stats;
};

/// Groups accuracy records by kind (and committee size) and summarizes each
/// group with box-plot statistics.
inline std::vector<SummaryRow> summarize_records(
    const std::vector<json>& records) {
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& r : records) {
    const std::string kind = r.value("kind", "");
    if (kind != "digital" && kind != "mapped" && kind != "individual" &&
        kind != "committee")
      continue;
    const int size = kind == "committee" ? r.at("size").get<int>() : 0;
    groups[{kind, size}].push_back(r.at("accuracy").get<double>());
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, values] : groups) {
    SummaryRow row;
    row.group = key.first;
    row.size = key.second;
    row.count = values.size();
    row.stats = summarize(values);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write summary: " + path);
  out << "group,size,count,median,q1,q3,iqr,whisker_low,whisker_high,"
         "n_outliers\n";
  out.precision(12);
  for (const auto& row : rows) {
    out << row.group << ',' << row.size << ',' << row.count << ','
        << row.stats.median << ',' << row.stats.q1 << ',' << row.stats.q3
        << ',' << row.stats.iqr << ',' << row.stats.whisker_low << ','
        << row.stats.whisker_high << ',' << row.stats.outliers.size() << "\n";
  }
}

/// Trains (or loads cached) base networks for a configuration. Checkpoints
/// are cached by a key derived from the seed and training parameters.
inline std::vector<NetworkParams> train_base_networks(
    const ExperimentConfig& config, const LabeledSet& train_set,
    const LabeledSet& val_set, const RunPaths& paths,
    std::vector<TrainHistory>* histories = nullptr) {
  namespace fs = std::filesystem;
  const int n = config.counts.base_networks;
  std::vector<NetworkParams> nets(n);
  if (histories) histories->assign(n, TrainHistory{});
  if (!paths.checkpoint_dir.empty())
    fs::create_directories(paths.checkpoint_dir);

  parallel_for(n, paths.threads, [&](int i) {
    const std::uint64_t seed =
        derive_seed(config.master_seed, {rng_tag::kBaseNet, std::uint64_t(i)});
    std::string ckpt;
    if (!paths.checkpoint_dir.empty()) {
      ckpt = (fs::path(paths.checkpoint_dir) /
              detail::checkpoint_name(config, i, seed))
                 .string();
      if (fs::exists(ckpt)) {
        nets[i] = load_checkpoint(ckpt);
        return;
      }
    }
    NetworkParams init = init_network(config.architecture(), seed);
    TrainConfig tc = config.training;
    tc.shuffle_seed = seed;
    auto [trained, history] = train(init, train_set, val_set, tc);
    nets[i] = std::move(trained);
    if (histories) (*histories)[i] = std::move(history);
    if (!ckpt.empty()) save_checkpoint(nets[i], ckpt);
  });
  return nets;
}

namespace detail {

inline std::uint64_t tile_stream_tag(const ExperimentConfig& config,
                                     int net_index, int iteration,
                                     std::size_t layer, std::size_t tile) {
  return derive_seed(config.master_seed,
                     {std::uint64_t(net_index), std::uint64_t(iteration),
                      std::uint64_t(layer), std::uint64_t(tile)});
}

}  // namespace detail

/// Programming-stage faults and D2D variability: each disturbance iteration
/// represents a fresh physical implementation, so the device population is
/// re-sampled per (net, iteration, tile).
inline MappedNetwork apply_faults_to_network(const MappedNetwork& mapped,
                                             const ExperimentConfig& config,
                                             const DeviceProfile& profile,
                                             int net_index, int iteration) {
  MappedNetwork out = mapped;
  for (std::size_t layer = 0; layer < out.layers.size(); ++layer) {
    for (std::size_t t = 0; t < out.layers[layer].tiles.size(); ++t) {
      ConductanceTile& tile = out.layers[layer].tiles[t];
      const std::uint64_t tag =
          detail::tile_stream_tag(config, net_index, iteration, layer, t);
      Rng rng(derive_seed(tag, {rng_tag::kPopulation}));
      const DevicePopulation population =
          sample_population(tile.geometry.rows, tile.geometry.cols,
                            profile.population, profile.model, rng);
      Rng prog_rng(derive_seed(tag, {rng_tag::kProgram}));
      tile = program_tile(tile, population, profile.population.sigma_prog,
                          prog_rng);
    }
  }
  return out;
}

/// Read-stage RTN, sampled once per disturbance iteration by default; a
/// non-negative read_index derives an independent stream per read instead.
inline MappedNetwork apply_rtn_to_network(const MappedNetwork& mapped,
                                          const ExperimentConfig& config,
                                          const DeviceProfile& profile,
                                          int net_index, int iteration,
                                          long long read_index = -1) {
  if (!profile.model.rtn)
    throw std::runtime_error(
        "scenario requests RTN but the device profile has no RTN model");
  MappedNetwork out = mapped;
  for (std::size_t layer = 0; layer < out.layers.size(); ++layer) {
    for (std::size_t t = 0; t < out.layers[layer].tiles.size(); ++t) {
      ConductanceTile& tile = out.layers[layer].tiles[t];
      const std::uint64_t tag =
          detail::tile_stream_tag(config, net_index, iteration, layer, t);
      Rng rng(read_index < 0
                  ? derive_seed(tag, {rng_tag::kRtn})
                  : derive_seed(tag, {rng_tag::kRtn, std::uint64_t(read_index)}));
      tile = apply_rtn(tile, *profile.model.rtn, rng,
                       config.rtn_negative_only ? RtnSign::NegativeOnly
                                                : RtnSign::Symmetric);
    }
  }
  return out;
}

/// Applies the configured disturbances to a mapped network for one
/// disturbance iteration. Deterministic in (master seed, net, iteration).
inline MappedNetwork disturb_network(const MappedNetwork& mapped,
                                     const ExperimentConfig& config,
                                     const DeviceProfile& profile, int net_index,
                                     int iteration) {
  MappedNetwork out = mapped;
  if (config.scenario.faults)
    out = apply_faults_to_network(out, config, profile, net_index, iteration);
  if (config.scenario.rtn)
    out = apply_rtn_to_network(out, config, profile, net_index, iteration);
  return out;
}

/// Full pipeline for one configuration: train or load the base networks, map
/// them, disturb per iteration, evaluate individuals, sample committees and
/// summarize. Deterministic end-to-end in the master seed.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       const RunPaths& paths) {
  namespace fs = std::filesystem;
  config.validate();
  const DeviceProfile profile = load_device_profile(config.device_profile);

  // Data. The 60k-image file is dropped as soon as it is split.
  LabeledSet train_set, val_set;
  {
    LabeledSet full = load_mnist(
        find_mnist_file(config.data_dir, "train-images-idx3-ubyte"),
        find_mnist_file(config.data_dir, "train-labels-idx1-ubyte"));
    if (config.shuffled_split) full = shuffle_set(full, config.master_seed);
    std::tie(train_set, val_set) = split_train_validation(full, config.n_train);
  }
  const LabeledSet test = load_mnist(
      find_mnist_file(config.data_dir, "t10k-images-idx3-ubyte"),
      find_mnist_file(config.data_dir, "t10k-labels-idx1-ubyte"));

  ExperimentResult result;
  json meta;
  meta["kind"] = "meta";
  meta["config"] = config_to_json(config);
  meta["device"] = profile.model.name;

  // Base networks and their digital accuracy.
  std::vector<NetworkParams> nets =
      train_base_networks(config, train_set, val_set, paths);
  const int n_base = config.counts.base_networks;
  result.digital_accuracies.resize(n_base);
  parallel_for(n_base, paths.threads, [&](int i) {
    result.digital_accuracies[i] = evaluate_accuracy(nets[i], test);
  });

  // Mapping.
  MapOptions map_options;
  map_options.p_L = config.p_L;
  map_options.per_layer_wmax = config.per_layer_wmax;
  const SolveMode mode = config.scenario.line_resistance ? SolveMode::Nodal
                                                         : SolveMode::Ideal;
  if (config.scenario.line_resistance) {
    CrossbarGeometry geom = config.geometry;
    geom.r_word_ohm *= config.scenario.line_resistance_scale;
    geom.r_bit_ohm *= config.scenario.line_resistance_scale;
    map_options.geometry = geom;
  }
  if (config.scenario.intensity_reorder) {
    const IntensityProfile intensity =
        mean_input_intensity({&train_set, &val_set});
    map_options.input_permutation = intensity_permutation(intensity);
  }
  std::vector<MappedNetwork> mapped(n_base);
  parallel_for(n_base, paths.threads, [&](int i) {
    mapped[i] = map_network(nets[i], profile.model, map_options);
  });

  // Undisturbed mapped accuracy.
  const Eigen::MatrixXd test_inputs = test.inputs.transpose();
  const Eigen::MatrixXd val_inputs = config.emit_validation_pool
                                         ? Eigen::MatrixXd(val_set.inputs.transpose())
                                         : Eigen::MatrixXd();
  result.mapped_accuracies.resize(n_base);
  parallel_for(n_base, paths.threads, [&](int i) {
    NetworkEvaluator eval(mapped[i], mode);
    result.mapped_accuracies[i] = eval.accuracy(test);
  });

  // Disturbance iterations: member outputs on the evaluation set.
  const int n_iter = config.counts.disturbance_iterations;
  const int n_members = n_base * n_iter;
  const bool softmax_outputs = !config.pre_softmax_averaging;
  std::vector<Eigen::MatrixXd> member_outputs(n_members);
  std::vector<Eigen::MatrixXd> member_val_outputs(
      config.emit_validation_pool ? n_members : 0);
  result.individual_accuracies.resize(n_members);
  const bool per_read = config.rtn_per_read && config.scenario.rtn;
  parallel_for(n_members, paths.threads, [&](int m) {
    const int net = m % n_base;
    const int iteration = m / n_base;
    if (!per_read) {
      const MappedNetwork disturbed =
          disturb_network(mapped[net], config, profile, net, iteration);
      NetworkEvaluator eval(disturbed, mode, NodalOptions{}, 256,
                            softmax_outputs);
      member_outputs[m] = eval.infer(test_inputs);
      if (config.emit_validation_pool)
        member_val_outputs[m] = eval.infer(val_inputs);
    } else {
      // Fresh RTN per read: every evaluated item sees an independent
      // disturbance. Much slower, factorisations cannot be reused.
      MappedNetwork base = mapped[net];
      if (config.scenario.faults)
        base = apply_faults_to_network(base, config, profile, net, iteration);
      auto eval_per_read = [&](const Eigen::MatrixXd& inputs,
                               long long read_offset) {
        Eigen::MatrixXd outputs(10, inputs.cols());
        for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
          const MappedNetwork d = apply_rtn_to_network(
              base, config, profile, net, iteration, read_offset + i);
          NetworkEvaluator eval(d, mode, NodalOptions{}, 1, softmax_outputs);
          outputs.col(i) = eval.infer(inputs.col(i));
        }
        return outputs;
      };
      member_outputs[m] = eval_per_read(test_inputs, 0);
      if (config.emit_validation_pool)
        member_val_outputs[m] =
            eval_per_read(val_inputs, test_inputs.cols());
    }
    result.individual_accuracies[m] =
        detail::accuracy_of_outputs(member_outputs[m], test.labels);
  });

  // Committee sampling: samples_per_size spread over iterations; members of
  // one committee come from distinct base networks disturbed in the same
  // iteration (default scheme), or from distinct disturbances of a single
  // base network in the identical-digital-networks mode.
  struct CommitteeRecord {
    int size, iteration, sample;
    std::vector<int> nets;
    std::vector<int> iterations;
    double accuracy;
  };
  std::map<int, std::vector<CommitteeRecord>> committees;
  for (int size : config.counts.committee_sizes) {
    auto& list = committees[size];
    if (!config.scenario.identical_digital_networks) {
      for (int it = 0; it < n_iter; ++it) {
        const int share = config.counts.samples_per_size / n_iter +
                          (it < config.counts.samples_per_size % n_iter ? 1 : 0);
        Rng rng(derive_seed(config.master_seed,
                            {rng_tag::kCommittee, std::uint64_t(size),
                             std::uint64_t(it)}));
        const auto combos = sample_combinations(n_base, size, share, rng);
        for (std::size_t s = 0; s < combos.size(); ++s) {
          CommitteeRecord rec;
          rec.size = size;
          rec.iteration = it;
          rec.sample = int(s);
          rec.nets = combos[s];
          rec.iterations.assign(size, it);
          list.push_back(std::move(rec));
        }
      }
    } else {
      Rng rng(derive_seed(config.master_seed,
                          {rng_tag::kCommittee, std::uint64_t(size)}));
      for (int s = 0; s < config.counts.samples_per_size; ++s) {
        CommitteeRecord rec;
        rec.size = size;
        rec.iteration = -1;
        rec.sample = s;
        const int base = int(rng.uniform_below(std::uint64_t(n_base)));
        rec.nets.assign(size, base);
        rec.iterations = sample_combinations(n_iter, size, 1, rng)[0];
        list.push_back(std::move(rec));
      }
    }
    // Evaluate the sampled committees (equal weights).
    auto& records = committees[size];
    parallel_for(int(records.size()), paths.threads, [&](int s) {
      CommitteeRecord& rec = records[std::size_t(s)];
      Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(
          member_outputs[0].rows(), member_outputs[0].cols());
      for (int k = 0; k < rec.size; ++k)
        avg += member_outputs[rec.iterations[k] * n_base + rec.nets[k]];
      rec.accuracy = detail::accuracy_of_outputs(avg, test.labels);
    });
    auto& acc = result.committee_accuracies[size];
    for (const auto& rec : records) acc.push_back(rec.accuracy);
  }

  // Records, in a fixed deterministic order.
  result.records.push_back(meta);
  for (int i = 0; i < n_base; ++i)
    result.records.push_back(json{{"kind", "digital"},
                                  {"net", i},
                                  {"seed", nets[i].seed},
                                  {"accuracy", result.digital_accuracies[i]}});
  for (int i = 0; i < n_base; ++i)
    result.records.push_back(json{{"kind", "mapped"},
                                  {"net", i},
                                  {"seed", nets[i].seed},
                                  {"accuracy", result.mapped_accuracies[i]}});
  for (int m = 0; m < n_members; ++m) {
    const int net = m % n_base;
    const int iteration = m / n_base;
    result.records.push_back(
        json{{"kind", "individual"},
             {"net", net},
             {"seed", nets[net].seed},
             {"iteration", iteration},
             {"accuracy", result.individual_accuracies[m]}});
  }
  for (const auto& [size, list] : committees) {
    for (const auto& rec : list) {
      json j{{"kind", "committee"}, {"size", size},
             {"iteration", rec.iteration}, {"sample", rec.sample},
             {"nets", rec.nets},           {"accuracy", rec.accuracy}};
      if (config.scenario.identical_digital_networks)
        j["member_iterations"] = rec.iterations;
      result.records.push_back(std::move(j));
    }
  }

  // Pools.
  result.test_pool.eval_tag = "test";
  result.test_pool.presoftmax = config.pre_softmax_averaging;
  result.test_pool.labels = test.labels;
  for (int m = 0; m < n_members; ++m) {
    result.test_pool.pool.outputs.push_back(member_outputs[m]);
    result.test_pool.pool.ids.push_back(
        {nets[m % n_base].seed, m % n_base, m / n_base});
  }
  if (config.emit_validation_pool) {
    result.validation_pool.eval_tag = "validation";
    result.validation_pool.presoftmax = config.pre_softmax_averaging;
    result.validation_pool.labels = val_set.labels;
    for (int m = 0; m < n_members; ++m) {
      result.validation_pool.pool.outputs.push_back(member_val_outputs[m]);
      result.validation_pool.pool.ids.push_back(
          {nets[m % n_base].seed, m % n_base, m / n_base});
    }
  }

  // Persist.
  if (!paths.out_dir.empty()) {
    fs::create_directories(paths.out_dir);
    std::ofstream records(fs::path(paths.out_dir) / "records.jsonl");
    for (const auto& r : result.records) records << r.dump() << "\n";
    write_summary_csv(summarize_records(result.records),
                      (fs::path(paths.out_dir) / "summary.csv").string());
    save_pool(result.test_pool,
              (fs::path(paths.out_dir) / "pool_test.cmpool").string());
    if (config.emit_validation_pool)
      save_pool(result.validation_pool,
                (fs::path(paths.out_dir) / "pool_validation.cmpool").string());
  }
  return result;
}

}  // namespace cmsim
