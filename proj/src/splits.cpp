#include "octgrade/splits.hpp"

#include <algorithm>
#include <cmath>

#include "octgrade/error.hpp"
#include "octgrade/rng.hpp"

namespace octgrade {

void to_json(nlohmann::json& j, const SplitPlan& p) {
  j = nlohmann::json{{"folds", p.folds}, {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SplitPlan& p) {
  p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  p.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const TargetSplit& s) {
  j = nlohmann::json{
      {"pseudo_pool", s.pseudo_pool_patients}, {"test", s.test_patients}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, TargetSplit& s) {
  s.pseudo_pool_patients = j.at("pseudo_pool").get<std::vector<std::string>>();
  s.test_patients = j.at("test").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

SplitPlan make_cv_folds(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "k must be at least 2");
  auto patients = dataset.patient_ids();
  if (patients.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::InsufficientPatients, std::to_string(patients.size()) +
                                                     " patients for " + std::to_string(k) + " folds");
  }
  Rng rng(seed);
  rng.shuffle(patients);
  SplitPlan plan;
  plan.seed = seed;
  plan.folds.resize(k);
  for (std::size_t i = 0; i < patients.size(); ++i) plan.folds[i % k].push_back(patients[i]);
  return plan;
}

TargetSplit split_target(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::InvalidFraction, "fraction must lie in (0, 1)");
  }
  if (dataset.domain() != Domain::target) {
    throw Error(ErrorCode::InvalidConfig, "split_target expects a target-domain dataset");
  }
  auto patients = dataset.patient_ids();
  Rng rng(seed);
  rng.shuffle(patients);
  // The epsilon keeps exact products such as 2/3 * 3 from rounding up.
  const double raw = fraction * static_cast<double>(patients.size());
  const auto n_pool = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  if (n_pool == 0 || n_pool >= patients.size()) {
    throw Error(ErrorCode::EmptySide, "split leaves one side without patients");
  }
  TargetSplit split;
  split.seed = seed;
  split.pseudo_pool_patients.assign(patients.begin(), patients.begin() + static_cast<long>(n_pool));
  split.test_patients.assign(patients.begin() + static_cast<long>(n_pool), patients.end());
  return split;
}

TrainVal materialize(const Dataset& dataset, const SplitPlan& plan, int val_fold) {
  if (val_fold < 0 || val_fold >= static_cast<int>(plan.folds.size())) {
    throw Error(ErrorCode::BadFoldIndex, std::to_string(val_fold));
  }
  std::vector<std::string> train_patients;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    if (static_cast<int>(f) == val_fold) continue;
    train_patients.insert(train_patients.end(), plan.folds[f].begin(), plan.folds[f].end());
  }
  return {dataset.subset_by_patients(train_patients),
          dataset.subset_by_patients(plan.folds[val_fold])};
}

PoolTest materialize(const Dataset& dataset, const TargetSplit& split) {
  return {dataset.subset_by_patients(split.pseudo_pool_patients),
          dataset.subset_by_patients(split.test_patients)};
}

}  // namespace octgrade
