#include "distill_lab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "distill_lab/errors.hpp"
#include "distill_lab/seed.hpp"

namespace distill_lab {

Tensor Dataset::inputs() const { return Tensor::from({size(), dim}, features); }

Tensor Dataset::inputs(std::span<const std::size_t> rows) const {
  std::vector<double> out(rows.size() * dim);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(rows[k] * dim), dim, out.begin() + k * dim);
  return Tensor::from({rows.size(), dim}, std::move(out));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> rows) const {
  std::vector<int> out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = labels[rows[k]];
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw SpecError("dataset is empty");
  if (features.size() != labels.size() * dim) throw SpecError("feature matrix does not match label count");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

Standardizer Standardizer::fit(const Dataset& data) {
  Standardizer s;
  s.mean.assign(data.dim, 0.0);
  s.stddev.assign(data.dim, 0.0);
  const auto n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data.dim; ++j) s.mean[j] += data.at(i, j);
  for (auto& m : s.mean) m /= n;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data.dim; ++j) {
      const double d = data.at(i, j) - s.mean[j];
      s.stddev[j] += d * d;
    }
  for (auto& v : s.stddev) {
    v = std::sqrt(v / n);
    if (v == 0.0) v = 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& data) const {
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data.dim; ++j) {
      auto& v = data.features[i * data.dim + j];
      v = (v - mean[j]) / stddev[j];
    }
}

namespace {

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return derive_seed(seed, split == Split::train ? salt::train_split : salt::test_split);
}

void check_common(std::size_t classes, std::size_t per_class) {
  if (classes < 2) throw SpecError("need at least 2 classes, got " + std::to_string(classes));
  if (per_class < 1) throw SpecError("need at least 1 sample per class");
}

}  // namespace

Dataset make_blobs(std::size_t classes, std::size_t per_class, double spread, std::uint64_t seed, Split split) {
  check_common(classes, per_class);
  if (!(spread > 0.0)) throw SpecError("blob spread must be > 0");
  std::mt19937_64 rng(split_seed(seed, split));
  std::normal_distribution<double> gauss(0.0, spread);
  Dataset d{2, classes, split, {}, {}};
  d.features.reserve(2 * classes * per_class);
  for (std::size_t k = 0; k < classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    const double cx = 4.0 * std::cos(angle), cy = 4.0 * std::sin(angle);
    for (std::size_t i = 0; i < per_class; ++i) {
      d.features.push_back(cx + gauss(rng));
      d.features.push_back(cy + gauss(rng));
      d.labels.push_back(static_cast<int>(k));
    }
  }
  return d;
}

Dataset make_spirals(std::size_t classes, std::size_t per_class, double noise, double turns, std::uint64_t seed,
                     Split split) {
  check_common(classes, per_class);
  if (noise < 0.0) throw SpecError("spiral noise must be >= 0");
  if (!(turns > 0.0)) throw SpecError("spiral turns must be > 0");
  std::mt19937_64 rng(split_seed(seed, split));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d{2, classes, split, {}, {}};
  d.features.reserve(2 * classes * per_class);
  for (std::size_t k = 0; k < classes; ++k) {
    const double offset = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      const double r = 1.0 - unit(rng);  // (0, 1]
      const double theta = 2.0 * std::numbers::pi * turns * r + offset + noise * gauss(rng);
      d.features.push_back(r * std::cos(theta));
      d.features.push_back(r * std::sin(theta));
      d.labels.push_back(static_cast<int>(k));
    }
  }
  return d;
}

TaskSpec canonical_spirals(std::uint64_t seed) {
  TaskSpec spec;
  spec.seed = seed;
  return spec;
}

DatasetPair make_task(const TaskSpec& spec) {
  auto gen = [&](Split split, std::size_t per_class) {
    return spec.kind == TaskKind::blobs
               ? make_blobs(spec.classes, per_class, spec.noise, spec.seed, split)
               : make_spirals(spec.classes, per_class, spec.noise, spec.turns, spec.seed, split);
  };
  DatasetPair pair{gen(Split::train, spec.per_class), gen(Split::test, spec.test_per_class)};
  if (spec.standardize) {
    const auto s = Standardizer::fit(pair.train);
    s.apply(pair.train);
    s.apply(pair.test);
  }
  return pair;
}

std::string format_dataset(const Dataset& data) {
  std::string out;
  for (std::size_t j = 0; j < data.dim; ++j) out += "x" + std::to_string(j) + ",";
  out += "label\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,", data.at(i, j));
      out += buf;
    }
    out += std::to_string(data.labels[i]);
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto text = format_dataset(data);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

Dataset parse_dataset(const std::string& text, std::optional<std::size_t> class_count) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ParseError(1, "empty dataset file");
  // Header: x0,...,x{d-1},label
  std::size_t dim = 0;
  {
    std::string expected;
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 2) throw ParseError(1, "header needs at least one feature column and a label column");
    dim = cols - 1;
    for (std::size_t j = 0; j < dim; ++j) expected += "x" + std::to_string(j) + ",";
    expected += "label";
    if (line != expected) throw ParseError(1, "expected header '" + expected + "'");
  }
  Dataset d;
  d.dim = dim;
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw ParseError(line_no, "empty row");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t j = 0; j < dim; ++j) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{} || next == end || *next != ',') {
        throw ParseError(line_no, "malformed value in column " + std::to_string(j));
      }
      if (!std::isfinite(v)) throw ParseError(line_no, "non-finite value in column " + std::to_string(j));
      d.features.push_back(v);
      p = next + 1;
    }
    int label = 0;
    auto [next, ec] = std::from_chars(p, end, label);
    if (ec != std::errc{} || next != end) throw ParseError(line_no, "malformed label");
    if (label < 0) throw ParseError(line_no, "negative label");
    if (class_count && static_cast<std::size_t>(label) >= *class_count) {
      throw ParseError(line_no, "label " + std::to_string(label) + " >= class count " + std::to_string(*class_count));
    }
    max_label = std::max(max_label, label);
    d.labels.push_back(label);
  }
  if (d.labels.empty()) throw ParseError(line_no, "dataset has no rows");
  d.class_count = class_count ? *class_count : static_cast<std::size_t>(max_label) + 1;
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<std::size_t> class_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_dataset(text, class_count);
}

}  // namespace distill_lab
