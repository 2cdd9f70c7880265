#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modn/data.hpp"

namespace modn {

struct SplitSizes {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::size_t n_test = 0;
};

/// Source dataset A with some features deleted, target dataset B and a test
/// set, both with every feature. Record sets are disjoint.
struct IioSplit {
  DatasetTable source_a;
  DatasetTable target_b;
  DatasetTable test;
  double overlap = 1.0;
  std::vector<std::string> deleted_features;
};

/// ceil((1 - overlap) * n_features), ignoring floating-point residue below 1e-9
/// so that e.g. overlap 0.6 of 10 features deletes exactly 4.
std::size_t deleted_feature_count(std::size_t n_features, double overlap);

/// Partitions records by a seeded shuffle (A first, then B, then test) and
/// removes a seeded draw of deleted_feature_count features from A's schema
/// and records.
IioSplit simulate_iio_split(const DatasetTable& full, double overlap, SplitSizes sizes, std::uint64_t seed);

}  // namespace modn
