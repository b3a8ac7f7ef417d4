#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distill_lab/tensor.hpp"

namespace distill_lab {

enum class Split { train, test };

struct Dataset {
  std::size_t dim = 0;
  std::size_t class_count = 0;
  Split split = Split::train;
  std::vector<double> features;  // row-major [size() x dim]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  double at(std::size_t row, std::size_t col) const { return features[row * dim + col]; }
  /// All rows as an [N x dim] tensor (no grad).
  Tensor inputs() const;
  /// Selected rows as a tensor and their labels.
  Tensor inputs(std::span<const std::size_t> rows) const;
  std::vector<int> labels_of(std::span<const std::size_t> rows) const;
  void validate() const;
};

/// Per-column affine standardisation fitted on one split.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(const Dataset& data);
  void apply(Dataset& data) const;
};

/// Gaussian clusters around C centres spaced evenly on a circle of radius 4.
/// The split selects an independent random stream, so train and test never
/// share draws.
Dataset make_blobs(std::size_t classes, std::size_t per_class, double spread, std::uint64_t seed,
                   Split split = Split::train);

/// C interleaved Archimedean arms. A sample of class k at radius r in (0, 1]
/// sits at angle 2*pi*turns*r + 2*pi*k/C plus N(0, noise^2) angular jitter.
Dataset make_spirals(std::size_t classes, std::size_t per_class, double noise, double turns, std::uint64_t seed,
                     Split split = Split::train);

struct DatasetPair {
  Dataset train;
  Dataset test;
};

enum class TaskKind { blobs, spirals };

struct TaskSpec {
  TaskKind kind = TaskKind::spirals;
  std::size_t classes = 3;
  std::size_t per_class = 500;
  double noise = 0.35;  // spread for blobs
  double turns = 1.75;
  std::uint64_t seed = 0;
  std::size_t test_per_class = 500;
  bool standardize = true;
};

/// The canonical desk task: 3 spiral arms, noise 0.35, 1.75 turns, 500 per
/// class in each split.
TaskSpec canonical_spirals(std::uint64_t seed = 0);

/// Generates both splits and standardises them with train statistics.
DatasetPair make_task(const TaskSpec& spec);

/// CSV with header x0,...,x{d-1},label and 17 significant digits per value.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
std::string format_dataset(const Dataset& data);
/// When class_count is not given it is taken as max label + 1.
Dataset load_dataset(const std::filesystem::path& path, std::optional<std::size_t> class_count = std::nullopt);
Dataset parse_dataset(const std::string& text, std::optional<std::size_t> class_count = std::nullopt);

}  // namespace distill_lab
