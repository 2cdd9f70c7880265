#include "modn/iio_split.hpp"

#include <cmath>
#include <numeric>

#include "modn/errors.hpp"
#include "modn/random.hpp"

namespace modn {

std::size_t deleted_feature_count(std::size_t n_features, double overlap) {
  const double exact = (1.0 - overlap) * static_cast<double>(n_features);
  return static_cast<std::size_t>(std::ceil(exact - 1e-9));
}

IioSplit simulate_iio_split(const DatasetTable& full, double overlap, SplitSizes sizes, std::uint64_t seed) {
  if (!(overlap > 0.0 && overlap <= 1.0)) throw ConfigError("overlap must lie in (0, 1]");
  if (sizes.n_a + sizes.n_b + sizes.n_test > full.records.size()) {
    throw ConfigError("split sizes exceed the " + std::to_string(full.records.size()) + " available records");
  }
  Rng rng(derive_seed(seed, "iio-split"));
  std::vector<std::size_t> order(full.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  auto slice = [&](std::size_t from, std::size_t n) {
    return subset(full, std::vector<std::size_t>(order.begin() + from, order.begin() + from + n));
  };

  IioSplit split;
  split.overlap = overlap;
  split.target_b = slice(sizes.n_a, sizes.n_b);
  split.test = slice(sizes.n_a + sizes.n_b, sizes.n_test);

  std::vector<std::size_t> features(full.schema.size());
  std::iota(features.begin(), features.end(), std::size_t{0});
  rng.shuffle(features.begin(), features.end());
  const std::size_t n_delete = deleted_feature_count(full.schema.size(), overlap);
  std::set<std::string> deleted;
  for (std::size_t i = 0; i < n_delete; ++i) deleted.insert(full.schema[features[i]].id);

  std::set<std::string> keep;
  for (const auto& f : full.schema) {
    if (deleted.count(f.id) == 0) {
      keep.insert(f.id);
    } else {
      split.deleted_features.push_back(f.id);
    }
  }
  split.source_a = restrict_features(slice(0, sizes.n_a), keep);
  return split;
}

}  // namespace modn
