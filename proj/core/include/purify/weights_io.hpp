#pragma once

#include <array>
#include <string>
#include <vector>

#include "purify/tensor.hpp"

namespace purify {

/// One named parameter block: a kernel tensor plus a bias vector of length
/// shape.n. Also used for non-convolutional parameters (e.g. normalization
/// scale/shift pairs) by convention of the owning module.
struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<float> kernel;
  std::vector<float> bias;
};

/// Parsed weight container.
///
/// On-disk layout (little-endian throughout):
///   magic (4 bytes), version u32, preprocessing means (3 x f32),
///   then per-layer records: name length u32, name bytes,
///   shape as four u32, kernel f32s (product of shape), bias f32s (shape[0]),
///   terminated by a CRC32 of everything before it.
struct WeightFile {
  std::string magic;
  std::uint32_t version = 1;
  std::array<float, 3> means{0.f, 0.f, 0.f};
  std::vector<WeightRecord> records;

  const WeightRecord* find(const std::string& name) const;
};

void save_weight_file(const std::string& path, const WeightFile& file);

/// Loads and CRC-checks a container; throws std::runtime_error naming the
/// problem (wrong magic, truncated record, checksum mismatch).
WeightFile load_weight_file(const std::string& path, const std::string& expected_magic);

}  // namespace purify
