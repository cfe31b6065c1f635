#pragma once

// MNIST ingestion: IDX container parsing (plain or gzip), normalisation to
// [0,1] intensities, train/validation splitting and per-pixel intensity
// statistics. Pure functions over immutable data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "cmsim/rng.hpp"

namespace cmsim {

/// Labelled inputs: one row per item, intensities in [0,1], labels in 0..9.
struct LabeledSet {
  Eigen::MatrixXd inputs;   // N x 784
  std::vector<int> labels;  // N entries

  [[nodiscard]] Eigen::Index size() const { return inputs.rows(); }
};

/// Mean intensity per network input: 784 pixel means plus the bias entry,
/// which is 1.0 by definition.
struct IntensityProfile {
  Eigen::VectorXd means;  // 785 entries
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& raw,
                                         const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw std::runtime_error("zlib init failed for " + path);
  std::vector<unsigned char> out;
  out.reserve(raw.size() * 4);
  std::vector<unsigned char> buf(1 << 16);
  zs.next_in = const_cast<unsigned char*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("gzip decompression failed for " + path);
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

/// Reads a file, transparently gunzipping when the name ends in ".gz".
inline std::vector<unsigned char> read_maybe_gz(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0)
    return gunzip(bytes, path);
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, size_t off,
                               const std::string& field) {
  if (off + 4 > b.size())
    throw std::runtime_error("truncated IDX header reading " + field);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 2051;
inline constexpr std::uint32_t kIdxLabelsMagic = 2049;

/// Load an MNIST-format IDX image/label pair. Bytes become intensities b/255.
/// Gzip-compressed files are accepted when the filename ends ".gz".
inline LabeledSet load_mnist(const std::string& images_path,
                             const std::string& labels_path) {
  const auto img = detail::read_maybe_gz(images_path);
  const auto lab = detail::read_maybe_gz(labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, 0, "images magic");
  if (img_magic != kIdxImagesMagic)
    throw std::runtime_error("bad images magic: expected 2051, got " +
                             std::to_string(img_magic) + " in " + images_path);
  const std::uint32_t lab_magic = detail::read_be32(lab, 0, "labels magic");
  if (lab_magic != kIdxLabelsMagic)
    throw std::runtime_error("bad labels magic: expected 2049, got " +
                             std::to_string(lab_magic) + " in " + labels_path);

  const std::uint32_t n_images = detail::read_be32(img, 4, "images count");
  const std::uint32_t rows = detail::read_be32(img, 8, "images rows");
  const std::uint32_t cols = detail::read_be32(img, 12, "images cols");
  const std::uint32_t n_labels = detail::read_be32(lab, 4, "labels count");
  if (n_images != n_labels)
    throw std::runtime_error("count mismatch: " + std::to_string(n_images) +
                             " images vs " + std::to_string(n_labels) +
                             " labels");

  const size_t pixels = size_t(rows) * cols;
  if (img.size() != 16 + size_t(n_images) * pixels)
    throw std::runtime_error("truncated images payload: expected " +
                             std::to_string(16 + size_t(n_images) * pixels) +
                             " bytes, got " + std::to_string(img.size()));
  if (lab.size() != 8 + size_t(n_labels))
    throw std::runtime_error("truncated labels payload: expected " +
                             std::to_string(8 + size_t(n_labels)) +
                             " bytes, got " + std::to_string(lab.size()));

  LabeledSet set;
  set.inputs.resize(n_images, pixels);
  set.labels.resize(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    const unsigned char* px = img.data() + 16 + size_t(i) * pixels;
    for (size_t j = 0; j < pixels; ++j)
      set.inputs(i, j) = double(px[j]) / 255.0;
    const unsigned char l = lab[8 + i];
    if (l > 9)
      throw std::runtime_error("label out of range at item " +
                               std::to_string(i) + ": " + std::to_string(l));
    set.labels[i] = l;
  }
  return set;
}

/// Serialize intensities back to raw pixel bytes via round(i*255); inverse of
/// the load normalisation.
inline std::vector<unsigned char> serialize_intensities(const LabeledSet& set) {
  std::vector<unsigned char> out;
  out.reserve(size_t(set.inputs.size()));
  for (Eigen::Index i = 0; i < set.inputs.rows(); ++i)
    for (Eigen::Index j = 0; j < set.inputs.cols(); ++j)
      out.push_back(
          static_cast<unsigned char>(std::lround(set.inputs(i, j) * 255.0)));
  return out;
}

/// First n_train items (file order) become the training set, the remainder
/// the validation set. Deterministic.
inline std::pair<LabeledSet, LabeledSet> split_train_validation(
    const LabeledSet& set, Eigen::Index n_train) {
  if (n_train < 0 || n_train > set.size())
    throw std::out_of_range("split point " + std::to_string(n_train) +
                            " outside data set of size " +
                            std::to_string(set.size()));
  LabeledSet train, val;
  const Eigen::Index n_val = set.size() - n_train;
  train.inputs = set.inputs.topRows(n_train);
  train.labels.assign(set.labels.begin(), set.labels.begin() + n_train);
  val.inputs = set.inputs.bottomRows(n_val);
  val.labels.assign(set.labels.begin() + n_train, set.labels.end());
  return {std::move(train), std::move(val)};
}

/// Seeded in-place permutation of a set, for the optional shuffled split.
inline LabeledSet shuffle_set(const LabeledSet& set, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {rng_tag::kSplit}));
  std::vector<Eigen::Index> perm(set.size());
  for (Eigen::Index i = 0; i < set.size(); ++i) perm[i] = i;
  for (Eigen::Index i = set.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_below(std::uint64_t(i) + 1)]);
  LabeledSet out;
  out.inputs.resize(set.inputs.rows(), set.inputs.cols());
  out.labels.resize(set.labels.size());
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    out.inputs.row(i) = set.inputs.row(perm[i]);
    out.labels[i] = set.labels[perm[i]];
  }
  return out;
}

/// Mean intensity of every pixel over the union of the given sets, plus the
/// bias entry fixed at 1.0.
inline IntensityProfile mean_input_intensity(
    const std::vector<const LabeledSet*>& sets) {
  Eigen::Index total = 0;
  Eigen::Index width = 0;
  for (const auto* s : sets) {
    total += s->size();
    if (s->size() > 0) width = s->inputs.cols();
  }
  if (total == 0)
    throw std::runtime_error("mean_input_intensity: all sets empty");

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(width);
  for (const auto* s : sets) {
    if (s->size() == 0) continue;
    if (s->inputs.cols() != width)
      throw std::runtime_error("mean_input_intensity: input width mismatch");
    sum += s->inputs.colwise().sum().transpose();
  }

  IntensityProfile profile;
  profile.means.resize(width + 1);
  profile.means.head(width) = sum / double(total);
  profile.means(width) = 1.0;
  return profile;
}

inline IntensityProfile mean_input_intensity(const LabeledSet& set) {
  return mean_input_intensity(std::vector<const LabeledSet*>{&set});
}

/// Locates an MNIST file in a data directory, accepting either the plain IDX
/// name or its gzipped variant.
inline std::string find_mnist_file(const std::string& dir,
                                   const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path plain = fs::path(dir) / name;
  if (fs::exists(plain)) return plain.string();
  const fs::path gz = fs::path(dir) / (name + ".gz");
  if (fs::exists(gz)) return gz.string();
  throw std::runtime_error("MNIST file not found: " + plain.string() +
                           " (also tried .gz)");
}

}  // namespace cmsim
