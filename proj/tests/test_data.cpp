#include <gtest/gtest.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace gcl;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> be(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::size_t n, std::size_t r, std::size_t c) {
  std::vector<unsigned char> b;
  for (auto v : {kIdxImagesMagic, static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(r),
                 static_cast<std::uint32_t>(c)}) {
    auto x = be(v);
    b.insert(b.end(), x.begin(), x.end());
  }
  for (std::size_t i = 0; i < n * r * c; ++i) b.push_back(static_cast<unsigned char>(i * 17 % 256));
  return b;
}

std::vector<unsigned char> idx_labels(std::vector<unsigned char> labels) {
  std::vector<unsigned char> b = be(kIdxLabelsMagic);
  auto n = be(static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), n.begin(), n.end());
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gcl_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_plain(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<long>(b.size()));
}

void write_gz(const fs::path& p, const std::vector<unsigned char>& b) {
  gzFile f = gzopen(p.c_str(), "wb");
  gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
  gzclose(f);
}

std::string data_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Idx, ParsesTinyImages) {
  const auto img = parse_idx_images(idx_images(4, 2, 2));
  EXPECT_EQ(img.count, 4u);
  EXPECT_EQ(img.rows, 2u);
  const Dataset d = dataset_from_idx(img, parse_idx_labels(idx_labels({3, 0, 1, 2})));
  EXPECT_EQ(d.features.shape(), (Shape{4, 4}));
  EXPECT_EQ(d.labels, (std::vector<int>{3, 0, 1, 2}));
  EXPECT_EQ(d.num_classes, 4u);
  EXPECT_FLOAT_EQ(d.features.at(1, 0), 68.0f / 255.0f);
  EXPECT_EQ(d.grid_cols, 2u);
}

TEST(Idx, ErrorsNameTheOffset) {
  auto bytes = idx_images(4, 2, 2);
  bytes[3] = 0x01;
  EXPECT_NE(data_error([&] { parse_idx_images(bytes); }).find("byte offset 0"), std::string::npos);
  auto cut = idx_images(4, 2, 2);
  cut.resize(20);
  EXPECT_NE(data_error([&] { parse_idx_images(cut); }).find("byte offset 20"), std::string::npos);
  const std::vector<unsigned char> stub{0, 0};
  EXPECT_NE(data_error([&] { parse_idx_labels(stub); }).find("byte offset 0"), std::string::npos);
  auto labels = idx_labels({1, 2, 3});
  labels.pop_back();
  EXPECT_THROW(parse_idx_labels(labels), DataError);
  EXPECT_THROW(dataset_from_idx(parse_idx_images(idx_images(4, 2, 2)), {1, 2}), DataError);
}

TEST(Idx, ReadsPlainAndGzipFiles) {
  const auto img = idx_images(4, 2, 2);
  const auto lbl = idx_labels({0, 1, 0, 1});
  write_plain(scratch("img"), img);
  write_plain(scratch("lbl"), lbl);
  write_gz(scratch("img.gz"), img);
  write_gz(scratch("lbl.gz"), lbl);
  const Dataset a = load_idx(scratch("img").string(), scratch("lbl").string());
  const Dataset b = load_idx(scratch("img.gz").string(), scratch("lbl.gz").string());
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_THROW(load_idx(scratch("missing").string(), scratch("lbl").string()), DataError);
}

TEST(Csv, ParsesAndScales) {
  std::istringstream in("a,label,b\n0.5,1,0.25\n1,0,0\n");
  const Dataset d = parse_csv(in);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(d.features, Tensor::matrix({{0.5f, 0.25f}, {1.0f, 0.0f}}));
  std::istringstream wide("x,label\n10,0\n30,1\n20,1\n");
  EXPECT_EQ(parse_csv(wide).features, Tensor::matrix({{0.0f}, {1.0f}, {0.5f}}));
}

TEST(Csv, MalformedInputRejected) {
  std::istringstream no_label("a,b\n1,2\n");
  EXPECT_THROW(parse_csv(no_label), DataError);
  std::istringstream bad("a,label\n0.1,0\nzz,1\n");
  EXPECT_NE(data_error([&] { parse_csv(bad); }).find("byte offset 14"), std::string::npos);
  std::istringstream ragged("a,label\n0.1,0,4\n");
  EXPECT_THROW(parse_csv(ragged), DataError);
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), DataError);
}

TEST(Synthetic, RatioAndDeterminism) {
  SyntheticSpec s;
  s.samples = 20000;
  s.positive = 1;
  s.negative = 9;
  s.seed = 4;
  const Dataset d = synthetic_gaussians(s);
  const auto h = label_histogram(d);
  EXPECT_NEAR(static_cast<double>(h[1]) / 20000.0, 0.1, 0.01);
  EXPECT_EQ(synthetic_gaussians(s).features, d.features);
  for (float v : d.features.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  s.positive = s.negative = 0;
  EXPECT_THROW(synthetic_gaussians(s), ConfigError);
}

TEST(Remap, EveryOtherClassIsBackground) {
  std::vector<int> all(10);
  std::iota(all.begin(), all.end(), 0);
  const auto r = remap_every_other(all, 10);
  EXPECT_EQ(r.labels, (std::vector<int>{1, 0, 2, 0, 3, 0, 4, 0, 5, 0}));
  EXPECT_EQ(r.num_classes, 6u);
  const auto two = remap_every_other(std::vector<int>{0, 1}, 2);
  EXPECT_EQ(two.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(two.num_classes, 2u);
  EXPECT_THROW(remap_every_other(std::vector<int>{10}, 10), ConfigError);
}

TEST(Split, DeterministicAndDisjoint) {
  SyntheticSpec s;
  s.samples = 100;
  s.width = 1;
  Dataset d = synthetic_gaussians(s);
  for (std::size_t i = 0; i < 100; ++i) d.features[i] = static_cast<float>(i) / 100.0f;
  const auto a = split_dataset(d, 0.2, 7);
  const auto b = split_dataset(d, 0.2, 7);
  EXPECT_EQ(a.val.size(), 20u);
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.val.features, b.val.features);
  std::set<float> seen(a.train.features.values().begin(), a.train.features.values().end());
  for (float v : a.val.features.values()) EXPECT_FALSE(seen.count(v));
  EXPECT_NE(split_dataset(d, 0.2, 8).val.features, a.val.features);
  EXPECT_THROW(split_dataset(d, 0.0, 1), ConfigError);
}

TEST(Downsample, MeanPoolsImages) {
  const Dataset d = dataset_from_idx(parse_idx_images(idx_images(1, 2, 4)), {0});
  const Dataset s = downsample(d, 2);
  EXPECT_EQ(s.width(), 2u);
  EXPECT_EQ(s.grid_rows, 1u);
  const auto px = [&](std::size_t i) { return d.features[i]; };
  EXPECT_FLOAT_EQ(s.features[0], (px(0) + px(1) + px(4) + px(5)) / 4.0f);
  EXPECT_FLOAT_EQ(s.features[1], (px(2) + px(3) + px(6) + px(7)) / 4.0f);
  Dataset flat = d;
  flat.grid_rows = 0;
  EXPECT_THROW(downsample(flat, 2), ConfigError);
}

TEST(BundledData, FashionSubsetIsBalanced) {
  const std::string dir = GCL_DATA_DIR "/";
  const Dataset d = load_idx(dir + "images-idx3-ubyte.gz", dir + "labels-idx1-ubyte.gz");
  EXPECT_EQ(d.size(), 10000u);
  EXPECT_EQ(d.width(), 784u);
  for (auto c : label_histogram(d)) EXPECT_EQ(c, 1000u);
  const auto r = remap_every_other(d);
  EXPECT_EQ(label_histogram(r), (std::vector<std::size_t>{5000, 1000, 1000, 1000, 1000, 1000}));
}
