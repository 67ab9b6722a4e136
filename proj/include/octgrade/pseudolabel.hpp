#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "octgrade/dataset.hpp"
#include "octgrade/metrics.hpp"
#include "octgrade/model.hpp"

namespace octgrade {

struct PseudoLabel {
  std::string image_id;
  ScoreVector probabilities{};
  GradeLabel hard = GradeLabel::healthy;  // argmax, ties toward the lower index
  double confidence = 0.0;                // max probability
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;  // pool order
};

enum class Provenance { source_gt, target_pseudo };

struct AugmentedDataset {
  Dataset data;
  std::vector<Provenance> provenance;  // parallel to data
};

/// Inference with the parameters held fixed; one entry per pool image.
PseudoLabelSet predict_pseudo_labels(const Network& net, const Dataset& pool);

/// Source samples followed by every pool sample whose confidence reaches
/// `threshold`, carrying its hard pseudo-label.
AugmentedDataset augment_dataset(const Dataset& source, const Dataset& pool,
                                 const PseudoLabelSet& labels, double threshold = 0.0);

/// Pool samples relabelled with their hard pseudo-labels.
Dataset pseudo_labeled_pool(const Dataset& pool, const PseudoLabelSet& labels);

/// Scores hard pseudo-labels against the pool's ground truth. Diagnostic
/// only; must be called inside an EvaluationScope for eval-only truth.
MetricReport pseudo_label_quality(const PseudoLabelSet& labels, const Dataset& truth);

/// `image_id,pseudo_grade,confidence,p_healthy,p_early,p_advanced`
void write_pseudo_labels_csv(const PseudoLabelSet& labels, const std::filesystem::path& path);
PseudoLabelSet read_pseudo_labels_csv(const std::filesystem::path& path);

}  // namespace octgrade
