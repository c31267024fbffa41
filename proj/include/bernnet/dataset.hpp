#pragma once

// Labeled datasets and their on-disk readers (IDX and CSV).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bernnet/layers.hpp"

namespace bernnet {

/// Samples are stored one per column.
struct Dataset {
  std::string name;
  Matrix inputs;            // features x samples
  std::vector<int> labels;  // one per sample, in [0, num_classes)
  int num_classes = 0;

  [[nodiscard]] int size() const { return static_cast<int>(inputs.cols()); }
  [[nodiscard]] int features() const { return static_cast<int>(inputs.rows()); }

  [[nodiscard]] Dataset slice(int first, int count) const {
    Dataset out;
    out.name = name;
    out.num_classes = num_classes;
    count = std::max(0, std::min(count, size() - first));
    out.inputs = inputs.middleCols(first, count);
    out.labels.assign(labels.begin() + first, labels.begin() + first + count);
    return out;
  }

  [[nodiscard]] Dataset select(const std::vector<int>& indices) const {
    Dataset out;
    out.name = name;
    out.num_classes = num_classes;
    out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.inputs.col(static_cast<Eigen::Index>(i)) = inputs.col(indices[i]);
      out.labels.push_back(labels[static_cast<std::size_t>(indices[i])]);
    }
    return out;
  }
};

/// Reader failure; `where` is a byte offset (IDX) or a 1-based line (CSV).
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t where, const char* unit)
      : std::runtime_error(what + " (" + unit + " " + std::to_string(where) + ")"), where_(where) {}
  [[nodiscard]] std::size_t where() const { return where_; }

 private:
  std::size_t where_;
};

/// Resolves a dataset path against $BERNET_DATA_DIR when it is relative and
/// does not exist as given.
inline std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::path(path).is_absolute() || fs::exists(path)) return path;
  if (const char* root = std::getenv("BERNET_DATA_DIR"))
    if (fs::exists(fs::path(root) / path)) return (fs::path(root) / path).string();
  return path;
}

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& path) {
  if (offset + 4 > bytes.size()) throw DataError(path + ": truncated IDX header", offset, "byte");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = detail::read_bytes(images_path);
  const auto labels = detail::read_bytes(labels_path);

  if (const auto magic = detail::read_be32(images, 0, images_path); magic != 0x00000803)
    throw DataError(images_path + ": bad IDX image magic", 0, "byte");
  if (const auto magic = detail::read_be32(labels, 0, labels_path); magic != 0x00000801)
    throw DataError(labels_path + ": bad IDX label magic", 0, "byte");
  const std::size_t n_images = detail::read_be32(images, 4, images_path);
  const std::size_t rows = detail::read_be32(images, 8, images_path);
  const std::size_t cols = detail::read_be32(images, 12, images_path);
  const std::size_t n_labels = detail::read_be32(labels, 4, labels_path);
  if (n_images != n_labels)
    throw DataError("image count " + std::to_string(n_images) + " does not match label count " +
                        std::to_string(n_labels),
                    4, "byte");
  const std::size_t features = rows * cols;
  if (images.size() < 16 + n_images * features)
    throw DataError(images_path + ": truncated pixel data", images.size(), "byte");
  if (labels.size() < 8 + n_labels) throw DataError(labels_path + ": truncated label data", labels.size(), "byte");

  Dataset ds;
  ds.name = std::filesystem::path(images_path).filename().string();
  ds.inputs.resize(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(n_images));
  for (std::size_t s = 0; s < n_images; ++s)
    for (std::size_t f = 0; f < features; ++f)
      ds.inputs(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(s)) =
          images[16 + s * features + f] / 255.0;
  ds.labels.resize(n_labels);
  for (std::size_t s = 0; s < n_labels; ++s) {
    ds.labels[s] = labels[8 + s];
    ds.num_classes = std::max(ds.num_classes, ds.labels[s] + 1);
  }
  return ds;
}

struct CsvSchema {
  std::string label_column = "label";
  /// Feature columns in order; empty means every column except the label.
  std::vector<std::string> feature_columns;
};

/// Reads a CSV file with a header row. Cells must be finite numbers and the
/// label column must hold non-negative integers.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(path + ": empty file", 1, "line");
  ++line_no;
  const auto header = split(line);
  auto column_of = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw DataError(path + ": no column named '" + name + "'", 1, "line");
  };
  const int label_col = column_of(schema.label_column);
  std::vector<int> feature_cols;
  if (schema.feature_columns.empty()) {
    for (int i = 0; i < static_cast<int>(header.size()); ++i)
      if (i != label_col) feature_cols.push_back(i);
  } else {
    for (const auto& name : schema.feature_columns) feature_cols.push_back(column_of(name));
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw DataError(path + ": expected " + std::to_string(header.size()) + " cells, found " +
                          std::to_string(cells.size()),
                      line_no, "line");
    auto number = [&](const std::string& cell) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size())
        throw DataError(path + ": non-numeric cell '" + cell + "'", line_no, "line");
      if (!std::isfinite(v)) throw DataError(path + ": non-finite cell '" + cell + "'", line_no, "line");
      return v;
    };
    std::vector<double> row;
    for (int c : feature_cols) row.push_back(number(cells[static_cast<std::size_t>(c)]));
    const double label = number(cells[static_cast<std::size_t>(label_col)]);
    if (label < 0 || label != std::floor(label))
      throw DataError(path + ": label must be a non-negative integer", line_no, "line");
    rows.push_back(std::move(row));
    labels.push_back(static_cast<int>(label));
  }
  if (rows.empty()) throw DataError(path + ": no data rows", line_no, "line");

  Dataset ds;
  ds.name = std::filesystem::path(path).filename().string();
  ds.inputs.resize(static_cast<Eigen::Index>(feature_cols.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (std::size_t f = 0; f < feature_cols.size(); ++f)
      ds.inputs(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(s)) = rows[s][f];
  ds.labels = std::move(labels);
  for (int l : ds.labels) ds.num_classes = std::max(ds.num_classes, l + 1);
  return ds;
}

/// Writes `ds` in the format load_csv reads (features f0..fN, then label).
inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (int f = 0; f < ds.features(); ++f) out << 'f' << f << ',';
  out << "label\n";
  out.precision(17);
  for (int s = 0; s < ds.size(); ++s) {
    for (int f = 0; f < ds.features(); ++f) out << ds.inputs(f, s) << ',';
    out << ds.labels[static_cast<std::size_t>(s)] << '\n';
  }
}

/// Two interleaved half circles with Gaussian noise, rescaled into [0, 1]^2.
/// Labels alternate 0, 1, 0, ...
inline Dataset make_two_moons(int n, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, noise);
  Dataset ds;
  ds.name = "two-moons";
  ds.num_classes = 2;
  ds.inputs.resize(2, n);
  for (int s = 0; s < n; ++s) {
    const int label = s % 2;
    const double a = angle(rng);
    double x = label == 0 ? std::cos(a) : 1.0 - std::cos(a);
    double y = label == 0 ? std::sin(a) : 0.5 - std::sin(a);
    x += jitter(rng);
    y += jitter(rng);
    // Raw range is about [-1.5, 2.5] x [-1, 1.5].
    ds.inputs(0, s) = std::clamp((x + 1.5) / 4.0, 0.0, 1.0);
    ds.inputs(1, s) = std::clamp((y + 1.0) / 2.5, 0.0, 1.0);
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace bernnet
