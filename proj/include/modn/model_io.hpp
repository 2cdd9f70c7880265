#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "modn/model.hpp"

namespace modn {

// Model file layout (all integers little-endian):
//
//   8 bytes   magic "MODNMDL\0"
//   u32       format version
//   u64       schema fingerprint
//   u64       header length H
//   H bytes   UTF-8 JSON header: options, features, targets, module specs,
//             blob table [{name, rows, cols}], normalized feature list
//   ...       parameter blobs in blob-table order, rows*cols IEEE-754 f64,
//             row-major
//   ...       normalization stats, (mean, stddev) f64 pairs in header order
//   u64       FNV-1a 64 checksum of every preceding byte
//
// Numbers never pass through text, so a round trip is bit-exact.

struct LoadOptions {
  /// When set, a differing schema fingerprint raises ModelFileError::fingerprint.
  std::optional<std::uint64_t> expected_fingerprint;
  /// Downgrade a fingerprint mismatch to a warning.
  bool warn_on_fingerprint_mismatch = false;
};

std::vector<std::uint8_t> serialize_model(const ModnModel& model);
/// Throws ModelFileError; never returns a partially decoded model.
ModnModel deserialize_model(const std::vector<std::uint8_t>& bytes, const LoadOptions& options = {});

void save_model(const ModnModel& model, const std::filesystem::path& destination);
ModnModel load_model(const std::filesystem::path& source, const LoadOptions& options = {});

}  // namespace modn
