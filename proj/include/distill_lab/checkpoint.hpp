#pragma once

// Checkpoint file layout:
//
//   distill_lab-checkpoint
//   format_version: 1
//   dtype: f64 | f32
//   class_count: <C>
//   seed: <u64>
//   training_step: <u64>
//   topology.network: none | phi=<in>[,<out>:<act>...];head=<h>x<C>[;adapter=<blocks>]
//   topology.connector: none | <blocks>        (blocks: <in>><out>[:relu],...)
//   entries: <count>
//   entry: <name> shape=<dims> offset=<bytes> bytes=<bytes> frozen=<0|1>
//   ...
//   payload_bytes: <total>
//   payload_crc32: <hex>
//   end_manifest
//   <payload: little-endian floats in entry order>
//
// Batchnorm running statistics are stored as entries named *.running_mean and
// *.running_var.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "distill_lab/nn.hpp"

namespace distill_lab {

inline constexpr int kCheckpointFormatVersion = 1;

enum class Dtype { f64, f32 };

struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  Dtype dtype = Dtype::f64;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;
  std::uint64_t training_step = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::optional<Network> network;
  /// Stand-alone connector, e.g. the auxiliary one trained alongside an
  /// own-classifier student, needed to probe it against the teacher.
  std::optional<Connector> connector;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Convenience: a checkpoint that must carry a network.
Network load_network(const std::filesystem::path& path);

}  // namespace distill_lab
