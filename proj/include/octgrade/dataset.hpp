#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/image.hpp"
#include "octgrade/rng.hpp"
#include "octgrade/tensor.hpp"

namespace octgrade {

inline constexpr int kScanRows = 248;
inline constexpr int kScanCols = 384;
inline constexpr int kNumClasses = 3;

enum class GradeLabel : int { healthy = 0, early = 1, advanced = 2 };

inline constexpr std::array<GradeLabel, kNumClasses> kAllGrades = {
    GradeLabel::healthy, GradeLabel::early, GradeLabel::advanced};

inline int index_of(GradeLabel g) { return static_cast<int>(g); }
GradeLabel grade_from_index(int index);
std::string_view to_string(GradeLabel g);
/// Accepts "0"/"1"/"2" or the lowercase class names.
GradeLabel parse_grade(std::string_view text);

enum class Domain { source, target, mixed };
std::string_view to_string(Domain d);
Domain parse_domain(std::string_view text);

struct BScan {
  std::string image_id;
  std::string patient_id;
  Matrix pixels;  // kScanRows x kScanCols, values in [0,1]
  Domain domain = Domain::source;
};

struct Sample {
  BScan scan;
  std::optional<GradeLabel> label;
  // Set for ground truth that may only be read while evaluating.
  bool eval_only = false;
};

// Counts and gates reads of eval-only labels. Reads are legal only inside an
// EvaluationScope; anywhere else they raise LabelLeakage.
namespace label_guard {

class EvaluationScope {
 public:
  EvaluationScope();
  ~EvaluationScope();
  EvaluationScope(const EvaluationScope&) = delete;
  EvaluationScope& operator=(const EvaluationScope&) = delete;
};

bool evaluation_active();
/// Total eval-only label reads since process start (or the last reset).
std::uint64_t eval_only_reads();
void reset_counter();

}  // namespace label_guard

/// Immutable ordered collection of scans. Samples are held by shared
/// pointer, so copies and subsets share pixel storage.
class Dataset {
  using Store = std::vector<std::shared_ptr<const Sample>>;

 public:
  class const_iterator {
   public:
    using iterator_category = std::forward_iterator_tag;
    using value_type = Sample;
    using difference_type = std::ptrdiff_t;
    using pointer = const Sample*;
    using reference = const Sample&;

    const_iterator() = default;
    explicit const_iterator(Store::const_iterator it) : it_(it) {}
    reference operator*() const { return **it_; }
    pointer operator->() const { return it_->get(); }
    const_iterator& operator++() {
      ++it_;
      return *this;
    }
    const_iterator operator++(int) {
      const_iterator t = *this;
      ++it_;
      return t;
    }
    bool operator==(const const_iterator&) const = default;

   private:
    Store::const_iterator it_;
  };

  struct SampleRange {
    const_iterator first;
    const_iterator last;
    const_iterator begin() const { return first; }
    const_iterator end() const { return last; }
  };

  Dataset() = default;
  Dataset(Domain domain, std::vector<Sample> samples);

  Domain domain() const { return domain_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t n_patients() const;
  std::vector<std::string> patient_ids() const;  // sorted, unique

  const BScan& scan(std::size_t i) const { return samples_[i]->scan; }
  bool has_label(std::size_t i) const { return samples_[i]->label.has_value(); }
  bool is_eval_only(std::size_t i) const { return samples_[i]->eval_only; }

  /// Guarded label read; throws LabelLeakage for eval-only labels outside an
  /// EvaluationScope and UnlabeledSample when there is no label.
  GradeLabel label(std::size_t i) const;

  SampleRange samples() const { return {const_iterator(samples_.begin()), const_iterator(samples_.end())}; }
  /// Copies of every sample, for building a derived dataset.
  std::vector<Sample> copy_samples() const;

  /// Samples whose patient id is in `patients`, in original order.
  Dataset subset_by_patients(const std::vector<std::string>& patients) const;
  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  Dataset(Domain domain, Store samples) : domain_(domain), samples_(std::move(samples)) {}

  Domain domain_ = Domain::source;
  Store samples_;
};

/// Scales an 8-bit single-channel raster into [0,1] and resamples it to the
/// canonical scan shape when necessary.
Matrix normalize_bscan(const Image8& raw);

/// Reads a `image_path,patient_id,grade,domain` CSV. Relative image paths are
/// resolved against the manifest directory; image ids are the file stems.
Dataset load_manifest(const std::filesystem::path& path);

/// Writes every scan as an 8-bit PNG under `image_dir` and the manifest at
/// `csv_path`, with image paths relative to the manifest.
void write_manifest(const Dataset& dataset, const std::filesystem::path& csv_path,
                    const std::filesystem::path& image_dir);

struct DomainShift {
  double contrast_factor = 1.0;
  double noise_std = 0.0;
  double brightness_offset = 0.0;
};

struct SynthConfig {
  int n_patients_source = 85;
  int n_patients_target = 71;
  int min_samples_per_patient = 1;
  int max_samples_per_patient = 2;
  DomainShift shift{0.6, 0.08, 0.12};
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Per-scan generation parameters of the layered band phantom.
struct BandParams {
  double top = 0.0;          // mean depth (rows) of the bright band's upper edge
  double thickness = 0.0;    // mean bright-band thickness in rows
  double undulation = 0.0;   // amplitude of the upper edge's slow wave
  double phase = 0.0;
  double hump_depth = 0.0;   // relative thickness modulation (double hump)
  double speckle_std = 0.0;  // base acquisition noise of both domains
};

/// Thickness interval [lo, hi) from which a grade's bands are drawn. The
/// intervals are disjoint and ordered healthy > early > advanced.
std::pair<double, double> thickness_range(GradeLabel grade);

BandParams draw_band_params(GradeLabel grade, Rng& rng);

/// Renders the noise-free phantom for `params`.
Matrix render_bands(const BandParams& params);

/// Applies base speckle and, for the target domain, the acquisition shift.
Matrix acquire(const Matrix& clean, double speckle_std, const DomainShift* shift,
               Rng& rng);

/// Measured bright-band thickness of a clean render, averaged over columns.
double measure_band_thickness(const Matrix& clean);

struct SynthSampleInfo {
  std::string image_id;
  GradeLabel grade;
  BandParams params;
};

struct SynthOutput {
  Dataset source;
  Dataset target;
  std::vector<SynthSampleInfo> info;  // source rows first, then target
};

/// Deterministic phantom generator. Target labels are attached but marked
/// eval-only. Pixels are quantized to 8-bit levels so a written manifest
/// reloads to an identical dataset.
SynthOutput generate_synthetic(const SynthConfig& config);

/// Writes images/, source.csv, target.csv and synth_meta.json.
void write_synthetic(const SynthOutput& data, const SynthConfig& config,
                     const std::filesystem::path& out_dir);

}  // namespace octgrade
