#pragma once

// On-disk formats: device profile files, experiment configuration files,
// crossbar tile dumps (JSON) and the committee pool cache (versioned binary).
// JSON inputs may carry // comments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmsim/committee.hpp"
#include "cmsim/dense_net.hpp"
#include "cmsim/device.hpp"
#include "cmsim/mapping.hpp"

namespace cmsim {

using json = nlohmann::json;

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open JSON file: " + path);
  return json::parse(in, nullptr, /*allow_exceptions=*/true,
                     /*ignore_comments=*/true);
}

/// Resolves `path` against `base_dir` unless it is absolute or already exists
/// relative to the working directory.
inline std::string resolve_path(const std::string& path,
                                const std::string& base_dir) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::path(path).is_absolute() || fs::exists(path))
    return path;
  return (fs::path(base_dir) / path).string();
}

// --- Device profiles --------------------------------------------------------

struct DeviceProfile {
  DeviceModel model;
  DevicePopulationSpec population;
};

inline DeviceProfile parse_device_profile(const json& j) {
  DeviceProfile profile;
  DeviceModel& m = profile.model;
  m.name = j.value("name", "unnamed");
  m.v_read_V = j.value("v_read_V", 0.1);
  if (j.contains("resistance_levels_ohm")) {
    const auto levels = j.at("resistance_levels_ohm").get<std::vector<double>>();
    m = DeviceModel::from_resistance_levels(m.name, levels, m.v_read_V);
  } else {
    m.g_on_S = j.at("g_on_S").get<double>();
    const auto& ratio = j.at("hrs_lrs_ratio");
    m.hrs_lrs_ratio = ratio.is_string()
                          ? std::numeric_limits<double>::infinity()
                          : ratio.get<double>();
  }
  if (j.contains("rtn")) {
    RtnModel rtn;
    for (const auto& lj : j.at("rtn").at("levels")) {
      RtnLevel level;
      level.resistance_ohm = lj.at("resistance_ohm").get<double>();
      level.occurrence = lj.at("occurrence").get<double>();
      if (lj.contains("median_delta"))
        level.mu_log = std::log(lj.at("median_delta").get<double>());
      else
        level.mu_log = lj.at("mu_log").get<double>();
      level.sigma_log = lj.value("sigma_log", 1.0);
      rtn.levels.push_back(level);
    }
    std::sort(rtn.levels.begin(), rtn.levels.end(),
              [](const RtnLevel& a, const RtnLevel& b) {
                return a.resistance_ohm < b.resistance_ohm;
              });
    m.rtn = std::move(rtn);
  }
  if (j.contains("population")) {
    const auto& p = j.at("population");
    profile.population.fraction_stuck_high = p.value("fraction_stuck_high", 0.0);
    profile.population.fraction_stuck_low = p.value("fraction_stuck_low", 0.0);
    profile.population.fraction_reduced_range =
        p.value("fraction_reduced_range", 0.0);
    profile.population.reduced_range_alpha = p.value("reduced_range_alpha", 0.6);
    profile.population.sigma_prog = p.value("sigma_prog", 0.0);
  }
  m.validate();
  profile.population.validate();
  return profile;
}

inline DeviceProfile load_device_profile(const std::string& path) {
  return parse_device_profile(load_json_file(path));
}

// --- Experiment configuration ------------------------------------------------

struct ScenarioFlags {
  bool faults = false;            // programming-stage faults + D2D variability
  bool rtn = false;               // read-stage RTN
  bool line_resistance = false;   // nodal solve with interconnect resistance
  double line_resistance_scale = 1.0;
  bool intensity_reorder = false;
  bool identical_digital_networks = false;
};

struct ExperimentCounts {
  int base_networks = 25;
  int disturbance_iterations = 5;
  std::vector<int> committee_sizes = {1, 2, 3, 4, 5};
  int samples_per_size = 10000;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int hidden = 25;
  std::string device_profile;  // path to a device profile JSON
  ScenarioFlags scenario;
  double p_L = 0.001;
  CrossbarGeometry geometry{128, 64, 0.35, 0.32};
  ExperimentCounts counts;
  TrainConfig training;
  int n_train = 50000;
  bool shuffled_split = false;
  bool per_layer_wmax = false;
  bool pre_softmax_averaging = false;
  bool rtn_negative_only = false;
  bool rtn_per_read = false;
  bool emit_validation_pool = false;
  std::uint64_t master_seed = 2020;
  std::string data_dir = "data/mnist";

  [[nodiscard]] Architecture architecture() const {
    return Architecture{{784, hidden, 10}};
  }

  void validate() const {
    if (hidden < 1) throw std::invalid_argument("config: hidden < 1");
    if (counts.base_networks < 1 || counts.disturbance_iterations < 1 ||
        counts.samples_per_size < 1)
      throw std::invalid_argument("config: counts must be >= 1");
    for (int k : counts.committee_sizes)
      if (k < 1 || k > counts.base_networks)
        throw std::invalid_argument(
            "config: committee size outside [1, base_networks]");
    if (scenario.identical_digital_networks)
      for (int k : counts.committee_sizes)
        if (k > counts.disturbance_iterations)
          throw std::invalid_argument(
              "config: identical-network committees need at least as many "
              "disturbance iterations as the committee size");
    geometry.validate();
  }
};

inline ExperimentConfig parse_experiment_config(const json& j,
                                                const std::string& base_dir) {
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.hidden = j.value("hidden", c.hidden);
  c.device_profile = resolve_path(j.value("device_profile", ""), base_dir);
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    c.scenario.faults = s.value("faults", false);
    c.scenario.rtn = s.value("rtn", false);
    c.scenario.line_resistance = s.value("line_resistance", false);
    c.scenario.line_resistance_scale = s.value("line_resistance_scale", 1.0);
    c.scenario.intensity_reorder = s.value("intensity_reorder", false);
    c.scenario.identical_digital_networks =
        s.value("identical_digital_networks", false);
  }
  c.p_L = j.value("p_l", c.p_L);
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    c.geometry.rows = g.value("rows", c.geometry.rows);
    c.geometry.cols = g.value("cols", c.geometry.cols);
    c.geometry.r_word_ohm = g.value("r_word_ohm", c.geometry.r_word_ohm);
    c.geometry.r_bit_ohm = g.value("r_bit_ohm", c.geometry.r_bit_ohm);
  }
  if (j.contains("counts")) {
    const auto& n = j.at("counts");
    c.counts.base_networks = n.value("base_networks", c.counts.base_networks);
    c.counts.disturbance_iterations =
        n.value("disturbance_iterations", c.counts.disturbance_iterations);
    if (n.contains("committee_sizes"))
      c.counts.committee_sizes = n.at("committee_sizes").get<std::vector<int>>();
    c.counts.samples_per_size =
        n.value("samples_per_size", c.counts.samples_per_size);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
    c.training.patience = t.value("patience", c.training.patience);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.max_epochs = t.value("max_epochs", c.training.max_epochs);
    c.n_train = t.value("n_train", c.n_train);
    c.shuffled_split = t.value("shuffled_split", c.shuffled_split);
  }
  c.per_layer_wmax = j.value("per_layer_wmax", c.per_layer_wmax);
  c.pre_softmax_averaging =
      j.value("pre_softmax_averaging", c.pre_softmax_averaging);
  c.rtn_negative_only = j.value("rtn_negative_only", c.rtn_negative_only);
  c.rtn_per_read = j.value("rtn_per_read", c.rtn_per_read);
  c.emit_validation_pool =
      j.value("emit_validation_pool", c.emit_validation_pool);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.data_dir = resolve_path(j.value("data_dir", c.data_dir), base_dir);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  const std::string base_dir =
      std::filesystem::path(path).parent_path().string();
  return parse_experiment_config(load_json_file(path), base_dir);
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["hidden"] = c.hidden;
  j["device_profile"] = c.device_profile;
  j["scenario"] = {{"faults", c.scenario.faults},
                   {"rtn", c.scenario.rtn},
                   {"line_resistance", c.scenario.line_resistance},
                   {"line_resistance_scale", c.scenario.line_resistance_scale},
                   {"intensity_reorder", c.scenario.intensity_reorder},
                   {"identical_digital_networks",
                    c.scenario.identical_digital_networks}};
  j["p_l"] = c.p_L;
  j["geometry"] = {{"rows", c.geometry.rows},
                   {"cols", c.geometry.cols},
                   {"r_word_ohm", c.geometry.r_word_ohm},
                   {"r_bit_ohm", c.geometry.r_bit_ohm}};
  j["counts"] = {{"base_networks", c.counts.base_networks},
                 {"disturbance_iterations", c.counts.disturbance_iterations},
                 {"committee_sizes", c.counts.committee_sizes},
                 {"samples_per_size", c.counts.samples_per_size}};
  j["training"] = {{"learning_rate", c.training.learning_rate},
                   {"patience", c.training.patience},
                   {"batch_size", c.training.batch_size},
                   {"max_epochs", c.training.max_epochs},
                   {"n_train", c.n_train},
                   {"shuffled_split", c.shuffled_split}};
  j["per_layer_wmax"] = c.per_layer_wmax;
  j["pre_softmax_averaging"] = c.pre_softmax_averaging;
  j["rtn_negative_only"] = c.rtn_negative_only;
  j["rtn_per_read"] = c.rtn_per_read;
  j["emit_validation_pool"] = c.emit_validation_pool;
  j["master_seed"] = c.master_seed;
  j["data_dir"] = c.data_dir;
  return j;
}

// --- Tile dumps ---------------------------------------------------------------

inline json tile_to_json(const ConductanceTile& tile) {
  json j;
  j["geometry"] = {{"rows", tile.geometry.rows},
                   {"cols", tile.geometry.cols},
                   {"r_word_ohm", tile.geometry.r_word_ohm},
                   {"r_bit_ohm", tile.geometry.r_bit_ohm}};
  j["used_row_begin"] = tile.used_row_begin;
  j["row_map"] = tile.row_map;
  json roles = json::array();
  for (const auto& role : tile.column_roles) {
    switch (role.kind) {
      case ColumnRole::Kind::Positive:
        roles.push_back({{"role", "positive"}, {"output", role.output}});
        break;
      case ColumnRole::Kind::Negative:
        roles.push_back({{"role", "negative"}, {"output", role.output}});
        break;
      default:
        roles.push_back({{"role", "unused"}});
    }
  }
  j["column_roles"] = std::move(roles);
  json g = json::array();
  for (int r = 0; r < tile.geometry.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < tile.geometry.cols; ++c) row.push_back(tile.g(r, c));
    g.push_back(std::move(row));
  }
  j["conductance_S"] = std::move(g);
  return j;
}

inline json mapped_network_to_json(const MappedNetwork& mapped) {
  json j;
  j["base_seed"] = mapped.base_seed;
  json layers = json::array();
  for (const auto& layer : mapped.layers) {
    json lj;
    lj["fan_out"] = layer.fan_out;
    lj["w_max"] = layer.spec.w_max;
    lj["p_l"] = layer.spec.p_L;
    lj["descale_A_per_unit"] = layer.spec.descale();
    lj["device"] = layer.spec.device.name;
    json tiles = json::array();
    for (const auto& tile : layer.tiles) tiles.push_back(tile_to_json(tile));
    lj["tiles"] = std::move(tiles);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline void write_tile_dump(const MappedNetwork& mapped,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tile dump: " + path);
  out << mapped_network_to_json(mapped).dump(1) << "\n";
}

// --- Committee pool cache (versioned binary, little-endian) -------------------
// Layout: magic "CMPL", u32 version, u8 tag length + tag chars, u8 presoftmax,
// u32 members, u32 classes, u32 items, labels (items x u8), then per member:
// u64 base_seed, i32 base_index, i32 iteration, items*classes f64
// (per item, class-major).

inline constexpr std::uint32_t kPoolVersion = 1;

struct PoolFile {
  CommitteePool pool;
  std::vector<int> labels;
  std::string eval_tag;     // e.g. "test" or "validation"
  bool presoftmax = false;  // outputs stored before the softmax
};

inline void save_pool(const PoolFile& file, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pool cache: " + path);
  auto put_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  out.write("CMPL", 4);
  put_u32(kPoolVersion);
  const std::uint8_t tag_len = static_cast<std::uint8_t>(file.eval_tag.size());
  out.write(reinterpret_cast<const char*>(&tag_len), 1);
  out.write(file.eval_tag.data(), tag_len);
  const std::uint8_t presoft = file.presoftmax ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&presoft), 1);
  const auto& pool = file.pool;
  put_u32(static_cast<std::uint32_t>(pool.members()));
  const std::uint32_t classes =
      pool.members() ? static_cast<std::uint32_t>(pool.outputs[0].rows()) : 0;
  put_u32(classes);
  put_u32(static_cast<std::uint32_t>(file.labels.size()));
  for (int label : file.labels) {
    const std::uint8_t b = static_cast<std::uint8_t>(label);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  for (std::size_t m = 0; m < pool.members(); ++m) {
    out.write(reinterpret_cast<const char*>(&pool.ids[m].base_seed), 8);
    const std::int32_t bi = pool.ids[m].base_index;
    const std::int32_t it = pool.ids[m].iteration;
    out.write(reinterpret_cast<const char*>(&bi), 4);
    out.write(reinterpret_cast<const char*>(&it), 4);
    const Eigen::MatrixXd& o = pool.outputs[m];
    for (Eigen::Index i = 0; i < o.cols(); ++i)
      for (Eigen::Index k = 0; k < o.rows(); ++k) {
        const double v = o(k, i);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!out) throw std::runtime_error("pool cache write failed: " + path);
}

inline PoolFile load_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pool cache: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "CMPL")
    throw std::runtime_error("not a pool cache file: " + path);
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kPoolVersion)
    throw std::runtime_error("unsupported pool cache version in " + path);
  PoolFile file;
  std::uint8_t tag_len = 0;
  in.read(reinterpret_cast<char*>(&tag_len), 1);
  file.eval_tag.resize(tag_len);
  in.read(file.eval_tag.data(), tag_len);
  std::uint8_t presoft = 0;
  in.read(reinterpret_cast<char*>(&presoft), 1);
  file.presoftmax = presoft != 0;
  const std::uint32_t members = get_u32();
  const std::uint32_t classes = get_u32();
  const std::uint32_t items = get_u32();
  file.labels.resize(items);
  for (auto& label : file.labels) {
    std::uint8_t b = 0;
    in.read(reinterpret_cast<char*>(&b), 1);
    label = b;
  }
  for (std::uint32_t m = 0; m < members; ++m) {
    CommitteePool::MemberId id;
    in.read(reinterpret_cast<char*>(&id.base_seed), 8);
    std::int32_t bi = 0, it = 0;
    in.read(reinterpret_cast<char*>(&bi), 4);
    in.read(reinterpret_cast<char*>(&it), 4);
    id.base_index = bi;
    id.iteration = it;
    Eigen::MatrixXd o(classes, items);
    for (std::uint32_t i = 0; i < items; ++i)
      for (std::uint32_t k = 0; k < classes; ++k) {
        double v;
        in.read(reinterpret_cast<char*>(&v), 8);
        o(k, i) = v;
      }
    file.pool.ids.push_back(id);
    file.pool.outputs.push_back(std::move(o));
  }
  if (!in) throw std::runtime_error("truncated pool cache: " + path);
  return file;
}

}  // namespace cmsim
