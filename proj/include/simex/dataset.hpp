#pragma once

// Dataset container plus IDX (MNIST-family) ingestion, stratified splitting
// and class balancing. Pixels are normalized to [0,1] at load time; all
// internal processing stays in [0,1].

#include "simex/rng.hpp"
#include "simex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

struct Dataset {
  std::string id;
  int n = 0, height = 0, width = 0;
  Eigen::ArrayXf pixels;            // n * height * width, row-major
  std::vector<int> labels;          // empty when unlabeled
  std::string provenance;

  bool labeled() const { return !labels.empty(); }
  long sample_size() const { return long(height) * width; }

  float* sample_ptr(int i) { return pixels.data() + long(i) * sample_size(); }
  const float* sample_ptr(int i) const { return pixels.data() + long(i) * sample_size(); }

  template <typename Scalar = float>
  Tensor<Scalar> sample(int i) const {
    Tensor<Scalar> t({height, width});
    for (long j = 0; j < sample_size(); ++j)
      t.data[j] = static_cast<Scalar>(sample_ptr(i)[j]);
    return t;
  }

  // Batch tensor (N,1,H,W) of the given sample indices.
  template <typename Scalar = float>
  Tensor<Scalar> batch(const std::vector<int>& idx) const {
    Tensor<Scalar> t({int(idx.size()), 1, height, width});
    const long sz = sample_size();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (long j = 0; j < sz; ++j)
        t.data[long(i) * sz + j] = static_cast<Scalar>(sample_ptr(idx[i])[j]);
    return t;
  }

  Dataset subset(const std::vector<int>& idx, std::string new_id = {}) const {
    Dataset out;
    out.id = new_id.empty() ? id : std::move(new_id);
    out.n = int(idx.size());
    out.height = height;
    out.width = width;
    out.provenance = provenance;
    out.pixels.resize(long(out.n) * sample_size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.pixels.segment(long(i) * sample_size(), sample_size()) =
          pixels.segment(long(idx[i]) * sample_size(), sample_size());
    if (labeled()) {
      out.labels.reserve(idx.size());
      for (int i : idx) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  void validate() const {
    if (pixels.size() != long(n) * sample_size())
      throw std::runtime_error("dataset '" + id + "': pixel count mismatch");
    if ((pixels < 0.0f).any() || (pixels > 1.0f).any())
      throw std::runtime_error("dataset '" + id + "': pixels outside [0,1]");
    if (labeled() && int(labels.size()) != n)
      throw std::runtime_error("dataset '" + id + "': label count mismatch");
    for (int l : labels)
      if (l < 0) throw std::runtime_error("dataset '" + id + "': negative label");
  }
};

// Map class index -> sample indices.
using ClassPartition = std::map<int, std::vector<int>>;

inline ClassPartition partition_by_class(const Dataset& d) {
  if (!d.labeled()) throw std::invalid_argument("partition_by_class: unlabeled dataset");
  ClassPartition p;
  for (int i = 0; i < d.n; ++i) p[d.labels[static_cast<std::size_t>(i)]].push_back(i);
  return p;
}

struct SplitSpec {
  double train_fraction = 5.0 / 6.0;
  std::uint64_t seed = 0;
};

// ---- IDX format -----------------------------------------------------------
// Big-endian magics: 0x00000803 (images: u32 n, rows, cols then u8 pixels),
// 0x00000801 (labels: u32 n then u8 labels). Pixels map [0,255] -> [0,1] by
// division; writing quantizes with round-half-up: byte = floor(p*255 + 0.5).

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated file while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline unsigned char quantize_pixel(float p) {
  const float v = p * 255.0f + 0.5f;
  return static_cast<unsigned char>(std::min(255.0f, std::max(0.0f, std::floor(v))));
}

inline Dataset load_idx(const std::string& images_path,
                        const std::optional<std::string>& labels_path = {}) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  const std::uint32_t magic = detail::read_be32(img, "image magic");
  if (magic != 0x00000803u)
    throw std::runtime_error("idx: bad image magic in " + images_path);
  const std::uint32_t n = detail::read_be32(img, "image count");
  const std::uint32_t rows = detail::read_be32(img, "rows");
  const std::uint32_t cols = detail::read_be32(img, "cols");
  if ((rows == 0 || cols == 0) && n != 0)
    throw std::runtime_error("idx: zero image dimensions in " + images_path);

  Dataset d;
  d.id = images_path;
  d.provenance = images_path;
  d.n = int(n);
  d.height = int(rows);
  d.width = int(cols);
  const long total = long(n) * rows * cols;
  std::vector<unsigned char> buf(static_cast<std::size_t>(total));
  img.read(reinterpret_cast<char*>(buf.data()), total);
  if (img.gcount() != total)
    throw std::runtime_error("idx: truncated pixel payload in " + images_path);
  d.pixels.resize(total);
  for (long i = 0; i < total; ++i)
    d.pixels[i] = float(buf[static_cast<std::size_t>(i)]) / 255.0f;

  if (labels_path) {
    std::ifstream lab(*labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + *labels_path);
    if (detail::read_be32(lab, "label magic") != 0x00000801u)
      throw std::runtime_error("idx: bad label magic in " + *labels_path);
    const std::uint32_t ln = detail::read_be32(lab, "label count");
    if (ln != n)
      throw std::runtime_error("idx: image/label count mismatch (" +
                               std::to_string(n) + " vs " + std::to_string(ln) + ")");
    std::vector<unsigned char> lbuf(ln);
    lab.read(reinterpret_cast<char*>(lbuf.data()), ln);
    if (lab.gcount() != long(ln))
      throw std::runtime_error("idx: truncated label payload in " + *labels_path);
    d.labels.assign(lbuf.begin(), lbuf.end());
  }
  d.validate();
  return d;
}

inline void write_idx(const Dataset& d, const std::string& images_path,
                      const std::optional<std::string>& labels_path = {}) {
  {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot write " + images_path);
    detail::write_be32(img, 0x00000803u);
    detail::write_be32(img, std::uint32_t(d.n));
    detail::write_be32(img, std::uint32_t(d.height));
    detail::write_be32(img, std::uint32_t(d.width));
    std::vector<unsigned char> buf(static_cast<std::size_t>(d.pixels.size()));
    for (long i = 0; i < d.pixels.size(); ++i)
      buf[static_cast<std::size_t>(i)] = quantize_pixel(d.pixels[i]);
    img.write(reinterpret_cast<const char*>(buf.data()), long(buf.size()));
    if (!img) throw std::runtime_error("idx: write failure on " + images_path);
  }
  if (labels_path) {
    if (!d.labeled() && d.n > 0)
      throw std::invalid_argument("idx: label path given for unlabeled dataset");
    std::ofstream lab(*labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot write " + *labels_path);
    detail::write_be32(lab, 0x00000801u);
    detail::write_be32(lab, std::uint32_t(d.n));
    std::vector<unsigned char> buf(d.labels.begin(), d.labels.end());
    lab.write(reinterpret_cast<const char*>(buf.data()), long(buf.size()));
    if (!lab) throw std::runtime_error("idx: write failure on " + *labels_path);
  }
}

// ---- split / balance ------------------------------------------------------

// Stratified when labels exist; per-class train counts are rounded to the
// nearest integer, so proportions hold within one sample per class.
inline std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec) {
  if (spec.train_fraction <= 0 || spec.train_fraction >= 1)
    throw std::invalid_argument("split: fraction must be in (0,1)");
  if (d.n < 2) throw std::invalid_argument("split: need at least 2 samples");

  RngStream rng(spec.seed);
  std::vector<int> train_idx, test_idx;

  auto split_group = [&](std::vector<int> idx) {
    rng.shuffle(idx);
    const std::size_t k = static_cast<std::size_t>(
        std::llround(spec.train_fraction * double(idx.size())));
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + long(k));
    test_idx.insert(test_idx.end(), idx.begin() + long(k), idx.end());
  };

  if (d.labeled()) {
    for (auto& [cls, idx] : partition_by_class(d)) {
      if (idx.size() < 2)
        throw std::invalid_argument("split: class " + std::to_string(cls) +
                                    " has fewer than 2 samples");
      split_group(idx);
    }
  } else {
    std::vector<int> all(static_cast<std::size_t>(d.n));
    std::iota(all.begin(), all.end(), 0);
    split_group(std::move(all));
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {d.subset(train_idx, d.id + "/train"), d.subset(test_idx, d.id + "/test")};
}

// Seeded subsample to exactly per_class_count samples per class.
inline Dataset balance(const Dataset& d, int per_class_count, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<int> keep;
  for (auto& [cls, idx] : partition_by_class(d)) {
    if (int(idx.size()) < per_class_count)
      throw std::invalid_argument("balance: class " + std::to_string(cls) +
                                  " has only " + std::to_string(idx.size()) +
                                  " samples, need " + std::to_string(per_class_count));
    std::vector<int> shuffled = idx;
    rng.shuffle(shuffled);
    keep.insert(keep.end(), shuffled.begin(), shuffled.begin() + per_class_count);
  }
  std::sort(keep.begin(), keep.end());
  return d.subset(keep, d.id + "/balanced");
}

}  // namespace simex
