#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcl/error.hpp"
#include "gcl/objective.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

/// Labeled samples, one flattened feature row per sample.
struct Dataset {
  Tensor features;  // [n x width], values in [0, 1]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::size_t grid_rows = 0;  // image layout of a row, when known
  std::size_t grid_cols = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t width() const { return features.cols(); }

  Tensor rows(std::span<const std::size_t> idx) const {
    const std::size_t w = width();
    Tensor out({idx.size(), w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = features.row(idx[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  std::vector<int> labels_at(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.features = rows(idx);
    d.labels = labels_at(idx);
    d.num_classes = num_classes;
    d.grid_rows = grid_rows;
    d.grid_cols = grid_cols;
    return d;
  }

  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
  }
};

struct DataSplit {
  Dataset train;
  Dataset val;
};

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads a whole file, transparently inflating gzip content.
inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("read error in " + path + " after byte " + std::to_string(out.size()));
  return out;
}

namespace detail {

inline std::uint32_t be32(std::span<const unsigned char> b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) {
    throw DataError(what + ": truncated header at byte offset " + std::to_string(off));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
};

inline IdxImages parse_idx_images(std::span<const unsigned char> bytes) {
  const std::uint32_t magic = detail::be32(bytes, 0, "IDX images");
  if (magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << "IDX images: bad magic 0x" << std::hex << magic << " at byte offset 0";
    throw DataError(os.str());
  }
  IdxImages img;
  img.count = detail::be32(bytes, 4, "IDX images");
  img.rows = detail::be32(bytes, 8, "IDX images");
  img.cols = detail::be32(bytes, 12, "IDX images");
  if (img.count == 0 || img.rows == 0 || img.cols == 0) throw DataError("IDX images: zero dimension at byte offset 4");
  const std::size_t need = 16 + img.count * img.rows * img.cols;
  if (bytes.size() < need) {
    throw DataError("IDX images: payload truncated at byte offset " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(need) + " bytes");
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<long>(need));
  return img;
}

inline std::vector<int> parse_idx_labels(std::span<const unsigned char> bytes) {
  const std::uint32_t magic = detail::be32(bytes, 0, "IDX labels");
  if (magic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << "IDX labels: bad magic 0x" << std::hex << magic << " at byte offset 0";
    throw DataError(os.str());
  }
  const std::size_t n = detail::be32(bytes, 4, "IDX labels");
  if (bytes.size() < 8 + n) {
    throw DataError("IDX labels: payload truncated at byte offset " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(8 + n) + " bytes");
  }
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n));
}

/// Images are scaled to [0, 1] by 1/255.
inline Dataset dataset_from_idx(const IdxImages& img, std::vector<int> labels) {
  if (labels.size() != img.count) {
    throw DataError("IDX label count " + std::to_string(labels.size()) + " != image count " +
                    std::to_string(img.count));
  }
  Dataset d;
  const std::size_t w = img.rows * img.cols;
  std::vector<float> values(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), values.begin(),
                 [](unsigned char p) { return static_cast<float>(p) / 255.0f; });
  d.features = Tensor({img.count, w}, std::move(values));
  d.labels = std::move(labels);
  d.num_classes = d.labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
  d.grid_rows = img.rows;
  d.grid_cols = img.cols;
  return d;
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img_bytes = read_file_bytes(images_path);
  const auto lbl_bytes = read_file_bytes(labels_path);
  return dataset_from_idx(parse_idx_images(img_bytes), parse_idx_labels(lbl_bytes));
}

// ---------------------------------------------------------------------------
// CSV: header row, a "label" column, every other column a feature.
// ---------------------------------------------------------------------------

inline Dataset parse_csv(std::istream& in, const std::string& name = "csv") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": missing header at byte offset 0");
  std::size_t offset = line.size() + 1;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) throw DataError(name + ": header has no 'label' column");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t width = header.size() - 1;
  if (width == 0) throw DataError(name + ": no feature columns");

  std::vector<float> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        if (col == label_col) {
          labels.push_back(std::stoi(cell, &used));
          if (labels.back() < 0) throw std::invalid_argument("negative");
        } else {
          values.push_back(std::stof(cell, &used));
        }
      } catch (const std::exception&) {
        throw DataError(name + ": bad value '" + cell + "' in column " + std::to_string(col) +
                        " at byte offset " + std::to_string(line_start));
      }
      ++col;
    }
    if (col != header.size()) {
      throw DataError(name + ": row has " + std::to_string(col) + " cells, expected " + std::to_string(header.size()) +
                      " at byte offset " + std::to_string(line_start));
    }
  }
  if (labels.empty()) throw DataError(name + ": no data rows");

  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const float lo = *lo_it, hi = *hi_it;
  if (lo < 0.0f || hi > 1.0f) {
    const float span = hi > lo ? hi - lo : 1.0f;
    for (auto& v : values) v = (v - lo) / span;
  }
  Dataset d;
  d.features = Tensor({labels.size(), width}, std::move(values));
  d.labels = std::move(labels);
  d.num_classes = static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
  return d;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t width = 16;
  std::size_t positive = 1;  // positive:negative ratio
  std::size_t negative = 1;
  float separation = 0.3f;   // distance between class means per coordinate
  float noise = 0.1f;
  std::uint64_t seed = 0;
};

/// Two Gaussian blobs: label 1 (positive) with probability pos/(pos+neg),
/// else label 0. Features are clamped to [0, 1].
inline Dataset synthetic_gaussians(const SyntheticSpec& s) {
  if (s.positive + s.negative == 0) throw ConfigError("synthetic ratio must not be 0:0");
  if (s.samples == 0 || s.width == 0) throw ConfigError("synthetic dataset needs samples and width");
  std::mt19937_64 rng(s.seed);
  std::bernoulli_distribution is_pos(static_cast<double>(s.positive) / static_cast<double>(s.positive + s.negative));
  std::normal_distribution<float> noise(0.0f, s.noise);
  Dataset d;
  d.features = Tensor({s.samples, s.width});
  d.labels.resize(s.samples);
  d.num_classes = 2;
  for (std::size_t i = 0; i < s.samples; ++i) {
    const bool pos = is_pos(rng);
    d.labels[i] = pos ? 1 : 0;
    const float center = 0.5f + (pos ? 0.5f : -0.5f) * s.separation;
    for (auto& v : d.features.row(i)) v = std::clamp(center + noise(rng), 0.0f, 1.0f);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Label remapping and splits
// ---------------------------------------------------------------------------

struct Remapped {
  std::vector<int> labels;
  std::size_t num_classes = 0;  // 1 background + ceil(C/2) kept classes
  ClassMapping original_to_remapped;
};

/// Odd original labels collapse into background class 0; even labels are kept
/// and renumbered 1..ceil(C/2) in order.
inline Remapped remap_every_other(std::span<const int> labels, std::size_t num_classes) {
  std::vector<int> table(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) table[c] = c % 2 == 1 ? 0 : static_cast<int>(c / 2 + 1);
  Remapped r;
  r.original_to_remapped = ClassMapping(std::move(table));
  r.labels = r.original_to_remapped.apply(labels);
  r.num_classes = (num_classes + 1) / 2 + 1;
  return r;
}

inline Dataset remap_every_other(const Dataset& d) {
  Dataset out = d;
  auto r = remap_every_other(d.labels, d.num_classes);
  out.labels = std::move(r.labels);
  out.num_classes = r.num_classes;
  return out;
}

/// Deterministic shuffle-then-cut split.
inline DataSplit split_dataset(const Dataset& d, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(d.size())));
  if (n_val == 0 || n_val >= d.size()) throw DataError("dataset too small for the requested split");
  std::span<const std::size_t> all(idx);
  return {d.subset(all.subspan(n_val)), d.subset(all.first(n_val))};
}

/// Mean-pools each image row by factor x factor.
inline Dataset downsample(const Dataset& d, std::size_t factor) {
  if (factor <= 1) return d;
  if (d.grid_rows == 0 || d.grid_cols == 0) throw ConfigError("downsampling needs an image layout");
  Dataset out = d;
  out.features = kernels::mean_pool(d.features, d.grid_rows, d.grid_cols, factor, factor);
  out.grid_rows = d.grid_rows / factor;
  out.grid_cols = d.grid_cols / factor;
  return out;
}

inline std::vector<std::size_t> label_histogram(const Dataset& d) {
  std::vector<std::size_t> h(d.num_classes, 0);
  for (int y : d.labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

}  // namespace gcl
