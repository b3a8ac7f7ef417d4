#pragma once

// Shared helpers for the unit tests: random tensors and small datasets.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <random>
#include <vector>

#include "distill_lab/data.hpp"
#include "distill_lab/tensor.hpp"

namespace test_support {

inline distill_lab::Tensor random_tensor(distill_lab::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(distill_lab::numel(shape));
  for (auto& x : v) x = u(rng);
  return distill_lab::Tensor::from(std::move(shape), std::move(v));
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

/// Small blobs task that every strategy learns in a few epochs.
inline distill_lab::DatasetPair small_blobs(std::uint64_t seed = 0, std::size_t per_class = 40) {
  distill_lab::TaskSpec spec;
  spec.kind = distill_lab::TaskKind::blobs;
  spec.classes = 3;
  spec.per_class = per_class;
  spec.test_per_class = per_class;
  spec.noise = 0.5;
  spec.seed = seed;
  return distill_lab::make_task(spec);
}

inline std::vector<double> values(const distill_lab::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace test_support
