#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "cmsim/mnist.hpp"
#include "cmsim/rng.hpp"

using namespace cmsim;
namespace fs = std::filesystem;

namespace {

const fs::path kTmp = fs::temp_directory_path() / "cmsim_mnist_tests";

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

std::vector<unsigned char> make_images(std::uint32_t magic,
                                       const std::vector<std::vector<unsigned char>>& imgs,
                                       int rows = 2, int cols = 2) {
  std::vector<unsigned char> out;
  put_be32(out, magic);
  put_be32(out, std::uint32_t(imgs.size()));
  put_be32(out, rows);
  put_be32(out, cols);
  for (const auto& img : imgs) out.insert(out.end(), img.begin(), img.end());
  return out;
}

std::vector<unsigned char> make_labels(std::uint32_t magic,
                                       const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out;
  put_be32(out, magic);
  put_be32(out, std::uint32_t(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::string write_file(const std::string& name,
                       const std::vector<unsigned char>& bytes) {
  fs::create_directories(kTmp);
  const std::string path = (kTmp / name).string();
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return path;
}

std::string write_gz(const std::string& name,
                     const std::vector<unsigned char>& bytes) {
  fs::create_directories(kTmp);
  const std::string path = (kTmp / name).string();
  gzFile gz = gzopen(path.c_str(), "wb");
  REQUIRE(gz != nullptr);
  gzwrite(gz, bytes.data(), unsigned(bytes.size()));
  gzclose(gz);
  return path;
}

LabeledSet tiny_set() {
  const auto images = make_images(
      2051, {{0, 255, 128, 7}, {1, 2, 3, 4}, {250, 251, 252, 253}});
  const auto labels = make_labels(2049, {3, 1, 9});
  return load_mnist(write_file("imgs", images), write_file("labs", labels));
}

}  // namespace

TEST_CASE("idx loading normalises bytes to [0,1]") {
  const LabeledSet set = tiny_set();
  REQUIRE(set.size() == 3);
  REQUIRE(set.inputs(0, 0) == 0.0);
  REQUIRE(set.inputs(0, 1) == 1.0);
  REQUIRE_THAT(set.inputs(0, 2), Catch::Matchers::WithinAbs(128.0 / 255.0, 1e-15));
  REQUIRE(set.labels == std::vector<int>{3, 1, 9});
}

TEST_CASE("gzip variants load identically") {
  const auto images = make_images(2051, {{9, 18, 27, 36}});
  const auto labels = make_labels(2049, {5});
  const LabeledSet plain =
      load_mnist(write_file("p_imgs", images), write_file("p_labs", labels));
  const LabeledSet gz = load_mnist(write_gz("g_imgs.gz", images),
                                   write_gz("g_labs.gz", labels));
  REQUIRE(plain.inputs == gz.inputs);
  REQUIRE(plain.labels == gz.labels);
}

TEST_CASE("format errors name the offending field") {
  const auto good_labels = make_labels(2049, {1});
  const auto good_images = make_images(2051, {{1, 2, 3, 4}});

  SECTION("labels magic in the images file") {
    const auto bad = make_images(2049, {{1, 2, 3, 4}});
    REQUIRE_THROWS_WITH(
        load_mnist(write_file("bad_magic", bad), write_file("gl", good_labels)),
        Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("count mismatch") {
    const auto two_labels = make_labels(2049, {1, 2});
    REQUIRE_THROWS_WITH(load_mnist(write_file("gi", good_images),
                                   write_file("two_labs", two_labels)),
                        Catch::Matchers::ContainsSubstring("count mismatch"));
  }
  SECTION("truncated payload") {
    auto truncated = good_images;
    truncated.pop_back();
    REQUIRE_THROWS_WITH(load_mnist(write_file("trunc", truncated),
                                   write_file("gl2", good_labels)),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("label out of range") {
    const auto bad_label = make_labels(2049, {11});
    REQUIRE_THROWS_WITH(load_mnist(write_file("gi2", good_images),
                                   write_file("bad_lab", bad_label)),
                        Catch::Matchers::ContainsSubstring("label"));
  }
}

TEST_CASE("round-trip: intensities serialize back to the source bytes") {
  const std::vector<std::vector<unsigned char>> imgs = {
      {0, 255, 128, 7}, {13, 64, 200, 99}};
  const auto payload = make_images(2051, imgs);
  const auto labels = make_labels(2049, {0, 1});
  const LabeledSet set =
      load_mnist(write_file("rt_imgs", payload), write_file("rt_labs", labels));
  const auto bytes = serialize_intensities(set);
  std::vector<unsigned char> expect;
  for (const auto& img : imgs) expect.insert(expect.end(), img.begin(), img.end());
  REQUIRE(bytes == expect);
}

TEST_CASE("split is deterministic and concatenation-preserving") {
  const LabeledSet set = tiny_set();

  SECTION("ordered split sizes") {
    auto [a, b] = split_train_validation(set, 2);
    REQUIRE(a.size() == 2);
    REQUIRE(b.size() == 1);
    REQUIRE(a.inputs.row(0) == set.inputs.row(0));
    REQUIRE(b.labels[0] == set.labels[2]);
  }
  SECTION("n_train = 0 gives empty train set") {
    auto [a, b] = split_train_validation(set, 0);
    REQUIRE(a.size() == 0);
    REQUIRE(b.size() == 3);
  }
  SECTION("out of bounds") {
    REQUIRE_THROWS_AS(split_train_validation(set, 4), std::out_of_range);
  }
  SECTION("same input twice gives identical splits") {
    auto [a1, b1] = split_train_validation(set, 1);
    auto [a2, b2] = split_train_validation(set, 1);
    REQUIRE(a1.inputs == a2.inputs);
    REQUIRE(b1.inputs == b2.inputs);
  }
}

TEST_CASE("mean intensity profile") {
  SECTION("single image plus bias") {
    LabeledSet set;
    set.inputs.resize(1, 4);
    set.inputs << 0.1, 0.2, 0.3, 0.4;
    set.labels = {0};
    const IntensityProfile p = mean_input_intensity(set);
    REQUIRE(p.means.size() == 5);
    REQUIRE(p.means(0) == 0.1);
    REQUIRE(p.means(4) == 1.0);
  }
  SECTION("all-zeros and all-ones sets of equal size average to 0.5") {
    LabeledSet zeros, ones;
    zeros.inputs = Eigen::MatrixXd::Zero(5, 3);
    zeros.labels.assign(5, 0);
    ones.inputs = Eigen::MatrixXd::Ones(5, 3);
    ones.labels.assign(5, 1);
    const IntensityProfile p = mean_input_intensity({&zeros, &ones});
    for (int i = 0; i < 3; ++i) REQUIRE(p.means(i) == 0.5);
    REQUIRE(p.means(3) == 1.0);
  }
  SECTION("all sets empty") {
    LabeledSet empty;
    empty.inputs.resize(0, 4);
    REQUIRE_THROWS_AS(mean_input_intensity({&empty}), std::runtime_error);
  }
  SECTION("permutation equivariance") {
    Rng rng(5);
    LabeledSet set;
    set.inputs.resize(6, 8);
    for (Eigen::Index i = 0; i < set.inputs.size(); ++i)
      set.inputs.data()[i] = rng.uniform();
    set.labels.assign(6, 0);
    const IntensityProfile base = mean_input_intensity(set);

    std::vector<int> perm = {3, 1, 7, 0, 5, 2, 6, 4};
    LabeledSet permuted = set;
    for (int j = 0; j < 8; ++j) permuted.inputs.col(j) = set.inputs.col(perm[j]);
    const IntensityProfile moved = mean_input_intensity(permuted);
    for (int j = 0; j < 8; ++j)
      REQUIRE_THAT(moved.means(j),
                   Catch::Matchers::WithinAbs(base.means(perm[j]), 1e-15));
  }
}

TEST_CASE("real MNIST files", "[data]") {
  const std::string dir = std::string(CMSIM_SOURCE_DIR) + "/data/mnist";
  const LabeledSet test =
      load_mnist(find_mnist_file(dir, "t10k-images-idx3-ubyte"),
                 find_mnist_file(dir, "t10k-labels-idx1-ubyte"));
  REQUIRE(test.size() == 10000);
  REQUIRE(test.inputs.cols() == 28 * 28);

  const LabeledSet full =
      load_mnist(find_mnist_file(dir, "train-images-idx3-ubyte"),
                 find_mnist_file(dir, "train-labels-idx1-ubyte"));
  auto [train, val] = split_train_validation(full, 50000);
  REQUIRE(train.size() == 50000);
  REQUIRE(val.size() == 10000);

  // Border pixels are uniformly background over the whole training file.
  const IntensityProfile p = mean_input_intensity({&train, &val});
  REQUIRE(p.means(0) == 0.0);
  REQUIRE(p.means(784) == 1.0);
  REQUIRE(p.means.minCoeff() >= 0.0);
  REQUIRE(p.means.maxCoeff() <= 1.0);
}
