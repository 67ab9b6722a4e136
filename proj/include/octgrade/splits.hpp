#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/dataset.hpp"

namespace octgrade {

struct SplitPlan {
  std::vector<std::vector<std::string>> folds;  // disjoint patient-id sets
  std::uint64_t seed = 0;

  bool operator==(const SplitPlan&) const = default;
};

struct TargetSplit {
  std::vector<std::string> pseudo_pool_patients;
  std::vector<std::string> test_patients;
  std::uint64_t seed = 0;

  bool operator==(const TargetSplit&) const = default;
};

void to_json(nlohmann::json& j, const SplitPlan& p);
void from_json(const nlohmann::json& j, SplitPlan& p);
void to_json(nlohmann::json& j, const TargetSplit& s);
void from_json(const nlohmann::json& j, TargetSplit& s);

/// Seeded patient shuffle dealt round-robin into k folds.
SplitPlan make_cv_folds(const Dataset& dataset, int k, std::uint64_t seed);

/// Seeded patient shuffle; the first ceil(fraction * n) patients form the
/// pseudo-label pool, the rest the test set.
TargetSplit split_target(const Dataset& dataset, double fraction, std::uint64_t seed);

struct TrainVal {
  Dataset train;
  Dataset val;
};

TrainVal materialize(const Dataset& dataset, const SplitPlan& plan, int val_fold);

struct PoolTest {
  Dataset pool;
  Dataset test;
};

PoolTest materialize(const Dataset& dataset, const TargetSplit& split);

}  // namespace octgrade
