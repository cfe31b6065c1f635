// Command-line front end: train, map, simulate, committee, report.
// Exits 0 on success; on failure prints a machine-readable error record to
// stderr and exits nonzero.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cmsim/cmsim.hpp"

namespace fs = std::filesystem;
using cmsim::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;  // 0 = keep the config's master seed
  int threads = int(std::thread::hardware_concurrency());
};

cmsim::ExperimentConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty())
    throw std::runtime_error("--config is required");
  cmsim::ExperimentConfig config =
      cmsim::load_experiment_config(args.config_path);
  if (args.seed != 0) config.master_seed = args.seed;
  return config;
}

cmsim::RunPaths run_paths(const CommonArgs& args) {
  cmsim::RunPaths paths;
  paths.out_dir = args.out_dir;
  paths.checkpoint_dir = (fs::path(args.out_dir) / "checkpoints").string();
  paths.threads = std::max(1, args.threads);
  return paths;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config JSON");
  cmd->add_option("--out-dir", args.out_dir, "Output directory");
  cmd->add_option("--seed", args.seed, "Master seed override (nonzero)");
  cmd->add_option("--threads", args.threads, "Worker threads");
}

int cmd_train(const CommonArgs& args) {
  const auto config = load_config(args);
  const auto paths = run_paths(args);
  const cmsim::LabeledSet full = cmsim::load_mnist(
      cmsim::find_mnist_file(config.data_dir, "train-images-idx3-ubyte"),
      cmsim::find_mnist_file(config.data_dir, "train-labels-idx1-ubyte"));
  const cmsim::LabeledSet source =
      config.shuffled_split ? cmsim::shuffle_set(full, config.master_seed)
                            : full;
  auto [train_set, val_set] =
      cmsim::split_train_validation(source, config.n_train);

  std::vector<cmsim::TrainHistory> histories;
  const auto nets = cmsim::train_base_networks(config, train_set, val_set,
                                               paths, &histories);

  fs::create_directories(args.out_dir);
  std::ofstream hist(fs::path(args.out_dir) / "training_history.csv");
  hist << "net,seed,epoch,train_loss,val_accuracy\n";
  hist.precision(12);
  for (std::size_t i = 0; i < nets.size(); ++i)
    for (std::size_t e = 0; e < histories[i].epochs.size(); ++e)
      hist << i << ',' << nets[i].seed << ',' << e << ','
           << histories[i].epochs[e].train_loss << ','
           << histories[i].epochs[e].val_accuracy << "\n";
  std::cout << "trained/loaded " << nets.size() << " networks; checkpoints in "
            << paths.checkpoint_dir << "\n";
  return 0;
}

int cmd_map(const CommonArgs& args, const std::string& net_path,
            const std::string& dump_path) {
  const auto config = load_config(args);
  const auto profile = cmsim::load_device_profile(config.device_profile);

  cmsim::NetworkParams net = cmsim::load_checkpoint(net_path);
  cmsim::MapOptions options;
  options.p_L = config.p_L;
  options.per_layer_wmax = config.per_layer_wmax;
  if (config.scenario.line_resistance) {
    cmsim::CrossbarGeometry geom = config.geometry;
    geom.r_word_ohm *= config.scenario.line_resistance_scale;
    geom.r_bit_ohm *= config.scenario.line_resistance_scale;
    options.geometry = geom;
  }
  if (config.scenario.intensity_reorder) {
    const cmsim::LabeledSet full = cmsim::load_mnist(
        cmsim::find_mnist_file(config.data_dir, "train-images-idx3-ubyte"),
        cmsim::find_mnist_file(config.data_dir, "train-labels-idx1-ubyte"));
    options.input_permutation =
        cmsim::intensity_permutation(cmsim::mean_input_intensity(full));
  }
  const cmsim::MappedNetwork mapped =
      cmsim::map_network(net, profile.model, options);
  fs::create_directories(fs::path(dump_path).parent_path().empty()
                             ? "."
                             : fs::path(dump_path).parent_path().string());
  cmsim::write_tile_dump(mapped, dump_path);
  std::cout << "wrote tile dump to " << dump_path << "\n";
  return 0;
}

int cmd_simulate(const CommonArgs& args) {
  const auto config = load_config(args);
  const auto paths = run_paths(args);
  const auto result = cmsim::run_experiment(config, paths);
  std::cout << "scenario " << config.name << ": " << result.records.size()
            << " records -> " << args.out_dir << "\n";
  for (const auto& row : cmsim::summarize_records(result.records)) {
    std::cout << "  " << row.group;
    if (row.group == "committee") std::cout << " size " << row.size;
    std::cout << ": median " << row.stats.median << " (n=" << row.count
              << ")\n";
  }
  return 0;
}

int cmd_committee(const CommonArgs& args, const std::string& pool_path,
                  const std::vector<int>& sizes, int samples, bool optimize) {
  const cmsim::PoolFile file = cmsim::load_pool(pool_path);
  const int n_members = int(file.pool.members());
  if (n_members == 0) throw std::runtime_error("pool cache is empty");

  // Committees combine distinct base networks; group members by base index.
  std::map<int, std::vector<int>> by_base;
  for (int m = 0; m < n_members; ++m)
    by_base[file.pool.ids[m].base_index].push_back(m);
  std::vector<int> bases;
  for (const auto& [base, members] : by_base) bases.push_back(base);

  const std::uint64_t seed = args.seed != 0 ? args.seed : 2020;
  fs::create_directories(args.out_dir);
  std::ofstream records(fs::path(args.out_dir) / "committee_records.jsonl");
  std::vector<json> record_list;

  for (int size : sizes) {
    if (size < 1 || size > int(bases.size()))
      throw std::runtime_error("committee size " + std::to_string(size) +
                               " outside [1, distinct bases]");
    cmsim::Rng rng(cmsim::derive_seed(
        seed, {cmsim::rng_tag::kCommittee, std::uint64_t(size)}));
    const auto combos =
        cmsim::sample_combinations(int(bases.size()), size, samples, rng);
    for (std::size_t s = 0; s < combos.size(); ++s) {
      std::vector<int> members;
      for (int b : combos[s]) {
        const auto& list = by_base[bases[b]];
        members.push_back(
            list[rng.uniform_below(std::uint64_t(list.size()))]);
      }
      const double acc = cmsim::committee_accuracy_subset(
          file.pool, members, cmsim::Weightings::equal(members.size()),
          file.labels);
      record_list.push_back(json{{"kind", "committee"},
                                 {"size", size},
                                 {"sample", int(s)},
                                 {"members", members},
                                 {"accuracy", acc}});
    }
  }
  if (optimize) {
    const cmsim::Weightings w =
        cmsim::optimize_weightings(file.pool, file.labels);
    std::vector<double> alpha(w.alpha.data(), w.alpha.data() + w.alpha.size());
    record_list.push_back(json{
        {"kind", "optimized_weightings"},
        {"alpha", alpha},
        {"accuracy",
         cmsim::committee_accuracy(file.pool, w, file.labels)}});
  }
  for (const auto& r : record_list) records << r.dump() << "\n";
  cmsim::write_summary_csv(
      cmsim::summarize_records(record_list),
      (fs::path(args.out_dir) / "committee_summary.csv").string());
  std::cout << "wrote " << record_list.size() << " committee records -> "
            << args.out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& records_path, const std::string& out_path) {
  std::ifstream in(records_path);
  if (!in) throw std::runtime_error("cannot open records: " + records_path);
  std::vector<json> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(json::parse(line));
  }
  cmsim::write_summary_csv(cmsim::summarize_records(records), out_path);
  std::cout << "summary written to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cmsim: simulator of memristive crossbar neural networks and their "
      "ensemble-averaging committees"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string net_path, dump_path = "tiles.json";
  std::string pool_path, records_path, report_out = "summary.csv";
  std::vector<int> sizes = {1, 2, 3, 4, 5};
  int samples = 1000;
  bool optimize = false;

  auto* train = app.add_subcommand("train", "Train/cache the base networks");
  add_common(train, args);

  auto* map = app.add_subcommand("map", "Map a checkpoint onto crossbar tiles");
  add_common(map, args);
  map->add_option("--net", net_path, "Checkpoint file")->required();
  map->add_option("--out", dump_path, "Tile dump JSON path");

  auto* simulate =
      app.add_subcommand("simulate", "Run a full disturbance experiment");
  add_common(simulate, args);

  auto* committee = app.add_subcommand(
      "committee", "Resample committees from a cached member pool");
  add_common(committee, args);
  committee->add_option("--pool", pool_path, "Pool cache file")->required();
  committee->add_option("--sizes", sizes, "Committee sizes");
  committee->add_option("--samples", samples, "Samples per size");
  committee->add_flag("--optimize", optimize,
                      "Also report numerically optimised weightings");

  auto* report = app.add_subcommand("report", "Summarize a records file");
  report->add_option("--records", records_path, "records.jsonl path")
      ->required();
  report->add_option("--out", report_out, "Summary CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(args);
    if (map->parsed()) return cmd_map(args, net_path, dump_path);
    if (simulate->parsed()) return cmd_simulate(args);
    if (committee->parsed())
      return cmd_committee(args, pool_path, sizes, samples, optimize);
    if (report->parsed()) return cmd_report(records_path, report_out);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
