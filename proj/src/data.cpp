// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace pdqat {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(path.string() + ": truncated header at byte " + std::to_string(offset),
                      offset);
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

template <std::floating_point Real>
Shape Dataset<Real>::sample_shape() const {
  if (features.empty()) return {};
  return Shape(features.shape().begin() + 1, features.shape().end());
}

template <std::floating_point Real>
void Dataset<Real>::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (features.rows() != labels.size())
    throw DimensionError("dataset has " + std::to_string(features.rows()) + " samples but " +
                         std::to_string(labels.size()) + " labels");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InputError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
  }
}

template <std::floating_point Real>
Dataset<Real> Dataset<Real>::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("subset: no indices");
  Dataset out;
  Shape shape = features.shape();
  shape[0] = indices.size();
  const std::size_t row = features.row_size();
  std::vector<Real> data;
  data.reserve(indices.size() * row);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto r = features.row(i);
    data.insert(data.end(), r.begin(), r.end());
    out.labels.push_back(labels.at(i));
  }
  out.features = Tensor<Real>(std::move(shape), std::move(data));
  out.num_classes = num_classes;
  out.label_names = label_names;
  out.normalization = normalization;
  return out;
}

template <std::floating_point Real>
Dataset<Real> load_idx(const std::filesystem::path& images,
                       const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  const std::uint32_t img_magic = read_be32(img, 0, images);
  if (img_magic != 0x00000803u) {
    std::ostringstream os;
    os << images.string() << ": bad image magic 0x" << std::hex << img_magic << " at byte 0";
    throw FormatError(os.str(), 0);
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels);
  if (lab_magic != 0x00000801u) {
    std::ostringstream os;
    os << labels.string() << ": bad label magic 0x" << std::hex << lab_magic << " at byte 0";
    throw FormatError(os.str(), 0);
  }
  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n == 0) throw InputError(images.string() + ": image count is zero");
  if (rows == 0 || cols == 0) throw FormatError(images.string() + ": zero image dimension", 8);
  if (n_labels != n) {
    throw FormatError(labels.string() + ": " + std::to_string(n_labels) + " labels for " +
                          std::to_string(n) + " images",
                      4);
  }
  const std::size_t pixels = n * rows * cols;
  if (img.size() < 16 + pixels) {
    throw FormatError(images.string() + ": truncated pixel data at byte " +
                          std::to_string(img.size()) + ", expected " +
                          std::to_string(16 + pixels),
                      img.size());
  }
  if (lab.size() < 8 + n) {
    throw FormatError(labels.string() + ": truncated label data at byte " +
                          std::to_string(lab.size()),
                      lab.size());
  }

  Dataset<Real> ds;
  std::vector<Real> data(pixels);
  for (std::size_t i = 0; i < pixels; ++i) data[i] = static_cast<Real>(img[16 + i]) / Real(255);
  ds.features = Tensor<Real>({n, 1, rows, cols}, std::move(data));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

template <std::floating_point Real>
Dataset<Real> load_csv(const std::filesystem::path& path, std::string_view label_column) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw InputError(path.string() + ": no column named '" + std::string(label_column) + "'");
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t width = header.size() - 1;
  if (width == 0) throw InputError(path.string() + ": no feature columns");

  Dataset<Real> ds;
  std::vector<Real> data;
  std::unordered_map<std::string, int> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()),
                        line_no);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) {
        auto [it, inserted] = ids.try_emplace(cells[c], static_cast<int>(ids.size()));
        if (inserted) ds.label_names.push_back(cells[c]);
        ds.labels.push_back(it->second);
        continue;
      }
      double v = 0;
      const char* first = cells[c].data();
      const char* last = first + cells[c].size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (cells[c].empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": column '" +
                              header[c] + "' is not numeric: '" + cells[c] + "'",
                          line_no);
      }
      data.push_back(static_cast<Real>(v));
    }
  }
  if (ds.labels.empty()) throw InputError(path.string() + ": no data rows");
  ds.features = Tensor<Real>({ds.labels.size(), width}, std::move(data));
  ds.num_classes = ids.size();
  return ds;
}

SyntheticKind synthetic_kind_from_string(std::string_view s) {
  if (s == "blobs") return SyntheticKind::blobs;
  if (s == "spirals") return SyntheticKind::spirals;
  throw InputError("unknown synthetic dataset kind '" + std::string(s) + "'");
}

template <std::floating_point Real>
Dataset<Real> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_per_class == 0) throw InputError("synthetic: n_per_class must be >= 1");
  if (spec.classes < 2) throw InputError("synthetic: need at least 2 classes");
  if (!(spec.noise >= 0)) throw InputError("synthetic: noise must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = spec.n_per_class * spec.classes;
  std::vector<Real> data;
  data.reserve(2 * n);
  Dataset<Real> ds;
  ds.labels.reserve(n);
  const double two_pi = 2 * std::numbers::pi;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double phase = two_pi * static_cast<double>(c) / static_cast<double>(spec.classes);
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      double x = 0, y = 0;
      if (spec.kind == SyntheticKind::blobs) {
        x = 2.0 * std::cos(phase);
        y = 2.0 * std::sin(phase);
        if (spec.noise > 0) {
          x += spec.noise * gauss(rng);
          y += spec.noise * gauss(rng);
        }
      } else {
        const double t = (static_cast<double>(i) + 1.0) / static_cast<double>(spec.n_per_class);
        double r = 2.0 * t;
        if (spec.noise > 0) r += spec.noise * gauss(rng);
        const double angle = phase + 1.5 * two_pi * t;
        x = r * std::cos(angle);
        y = r * std::sin(angle);
      }
      data.push_back(static_cast<Real>(x));
      data.push_back(static_cast<Real>(y));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.features = Tensor<Real>({n, 2}, std::move(data));
  ds.num_classes = spec.classes;
  return ds;
}

template <std::floating_point Real>
Normalization<Real> fit_standardization(const Dataset<Real>& train) {
  train.validate();
  const std::size_t n = train.size();
  const std::size_t f = train.features.row_size();
  Normalization<Real> norm;
  norm.mean.assign(f, Real(0));
  norm.scale.assign(f, Real(1));
  for (std::size_t j = 0; j < f; ++j) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += train.features.at(i, j);
    const double mean = sum / static_cast<double>(n);
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = train.features.at(i, j) - mean;
      sq += d * d;
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    norm.mean[j] = static_cast<Real>(mean);
    norm.scale[j] = sd > 0 ? static_cast<Real>(sd) : Real(1);
  }
  return norm;
}

template <std::floating_point Real>
void apply_normalization(Dataset<Real>& data, const Normalization<Real>& norm) {
  const std::size_t f = data.features.row_size();
  if (norm.mean.size() != f || norm.scale.size() != f)
    throw DimensionError("normalization width does not match dataset features");
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < f; ++j)
      data.features.at(i, j) = (data.features.at(i, j) - norm.mean[j]) / norm.scale[j];
  data.normalization = norm;
}

template <std::floating_point Real>
std::pair<Dataset<Real>, Dataset<Real>> split_dataset(const Dataset<Real>& data,
                                                      double fraction, std::uint64_t seed) {
  data.validate();
  if (!(fraction > 0 && fraction < 1)) throw InputError("split fraction must lie in (0, 1)");
  const std::size_t n = data.size();
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  held = std::clamp<std::size_t>(held, 1, n > 1 ? n - 1 : 1);
  if (n < 2) throw InputError("cannot split a dataset with fewer than 2 samples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> held_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> kept_idx(idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end());
  std::sort(held_idx.begin(), held_idx.end());
  std::sort(kept_idx.begin(), kept_idx.end());
  return {data.subset(kept_idx), data.subset(held_idx)};
}

template <std::floating_point Real>
BatchSequence<Real>::BatchSequence(const Dataset<Real>& data, std::size_t batch_size,
                                   std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw InputError("batch size must be >= 1");
  data.validate();
  order_.resize(data.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  num_batches_ = (data.size() + batch_size - 1) / batch_size;
}

template <std::floating_point Real>
Batch<Real> BatchSequence<Real>::operator[](std::size_t i) const {
  if (i >= num_batches_) throw InputError("batch index out of range");
  const std::size_t begin = i * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, order_.size());
  Batch<Real> b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(end));
  Shape shape = data_->features.shape();
  shape[0] = b.indices.size();
  const std::size_t row = data_->features.row_size();
  std::vector<Real> feats;
  feats.reserve(b.indices.size() * row);
  b.labels.reserve(b.indices.size());
  for (std::size_t idx : b.indices) {
    auto r = data_->features.row(idx);
    feats.insert(feats.end(), r.begin(), r.end());
    b.labels.push_back(data_->labels[idx]);
  }
  b.features = Tensor<Real>(std::move(shape), std::move(feats));
  return b;
}

#define PDQAT_INSTANTIATE(Real)                                                            \
  template struct Dataset<Real>;                                                           \
  template Dataset<Real> load_idx(const std::filesystem::path&,                            \
                                  const std::filesystem::path&);                           \
  template Dataset<Real> load_csv(const std::filesystem::path&, std::string_view);         \
  template Dataset<Real> gen_synthetic(const SyntheticSpec&);                              \
  template Normalization<Real> fit_standardization(const Dataset<Real>&);                  \
  template void apply_normalization(Dataset<Real>&, const Normalization<Real>&);           \
  template std::pair<Dataset<Real>, Dataset<Real>> split_dataset(const Dataset<Real>&,     \
                                                                 double, std::uint64_t);   \
  template class BatchSequence<Real>;

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)

}  // namespace pdqat
