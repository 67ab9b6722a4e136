#include "octgrade/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include "octgrade/error.hpp"

namespace octgrade {

GradeLabel grade_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw Error(ErrorCode::InvalidGrade, "grade index " + std::to_string(index));
  }
  return static_cast<GradeLabel>(index);
}

std::string_view to_string(GradeLabel g) {
  switch (g) {
    case GradeLabel::healthy: return "healthy";
    case GradeLabel::early: return "early";
    case GradeLabel::advanced: return "advanced";
  }
  return "?";
}

GradeLabel parse_grade(std::string_view text) {
  if (text == "0" || text == "healthy") return GradeLabel::healthy;
  if (text == "1" || text == "early") return GradeLabel::early;
  if (text == "2" || text == "advanced") return GradeLabel::advanced;
  throw Error(ErrorCode::InvalidGrade, "unrecognized grade '" + std::string(text) + "'");
}

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::source: return "source";
    case Domain::target: return "target";
    case Domain::mixed: return "mixed";
  }
  return "?";
}

Domain parse_domain(std::string_view text) {
  if (text == "source") return Domain::source;
  if (text == "target") return Domain::target;
  throw Error(ErrorCode::BadManifest, "unrecognized domain '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// label guard

namespace label_guard {
namespace {
thread_local int scope_depth = 0;
std::atomic<std::uint64_t> read_count{0};
}  // namespace

EvaluationScope::EvaluationScope() { ++scope_depth; }
EvaluationScope::~EvaluationScope() { --scope_depth; }

bool evaluation_active() { return scope_depth > 0; }
std::uint64_t eval_only_reads() { return read_count.load(); }
void reset_counter() { read_count.store(0); }

void record_read() { read_count.fetch_add(1); }

}  // namespace label_guard

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(Domain domain, std::vector<Sample> samples) : domain_(domain) {
  samples_.reserve(samples.size());
  for (auto& s : samples) samples_.push_back(std::make_shared<const Sample>(std::move(s)));
  std::unordered_set<std::string> ids;
  for (const auto& s : this->samples()) {
    if (!ids.insert(s.scan.image_id).second) {
      throw Error(ErrorCode::DuplicateImageId, s.scan.image_id);
    }
    if (s.scan.pixels.rows != kScanRows || s.scan.pixels.cols != kScanCols) {
      throw Error(ErrorCode::ShapeMismatch, "scan " + s.scan.image_id + " is not 248x384");
    }
    if (domain_ == Domain::source && !s.label) {
      throw Error(ErrorCode::InvalidGrade, "source sample " + s.scan.image_id + " has no grade");
    }
  }
}

std::size_t Dataset::n_patients() const { return patient_ids().size(); }

std::vector<std::string> Dataset::patient_ids() const {
  std::set<std::string> ids;
  for (const auto& s : samples_) ids.insert(s->scan.patient_id);
  return {ids.begin(), ids.end()};
}

GradeLabel Dataset::label(std::size_t i) const {
  const Sample& s = *samples_.at(i);
  if (!s.label) throw Error(ErrorCode::UnlabeledSample, s.scan.image_id);
  if (s.eval_only) {
    if (!label_guard::evaluation_active()) {
      throw Error(ErrorCode::LabelLeakage,
                  "eval-only label of " + s.scan.image_id + " read outside evaluation");
    }
    label_guard::record_read();
  }
  return *s.label;
}

Dataset Dataset::subset_by_patients(const std::vector<std::string>& patients) const {
  const std::unordered_set<std::string> keep(patients.begin(), patients.end());
  Store out;
  for (const auto& s : samples_) {
    if (keep.count(s->scan.patient_id)) out.push_back(s);
  }
  return Dataset(domain_, std::move(out));
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Store out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples_.at(i));
  return Dataset(domain_, std::move(out));
}

std::vector<Sample> Dataset::copy_samples() const {
  std::vector<Sample> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(*s);
  return out;
}

// ---------------------------------------------------------------------------
// ingestion

Matrix normalize_bscan(const Image8& raw) {
  if (raw.channels != 1) {
    throw Error(ErrorCode::NotGrayscale,
                "expected 1 channel, got " + std::to_string(raw.channels));
  }
  Matrix m(raw.rows, raw.cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = raw.data[i] / 255.0;
  if (m.rows != kScanRows || m.cols != kScanCols) {
    m = resample_bilinear(m, kScanRows, kScanCols);
  }
  return m;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == ',' && !quoted) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

constexpr const char* kManifestHeader = "image_path,patient_id,grade,domain";

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyDataset, path.string());
  strip_cr(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != kManifestHeader) {
    throw Error(ErrorCode::BadManifest, "header must be '" + std::string(kManifestHeader) + "'");
  }
  const auto base = path.parent_path();
  std::vector<Sample> samples;
  std::set<Domain> domains;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != 4) {
      throw Error(ErrorCode::BadManifest, "line " + std::to_string(line_no) + ": expected 4 fields");
    }
    Sample s;
    s.scan.domain = parse_domain(fields[3]);
    domains.insert(s.scan.domain);
    if (fields[2].empty()) {
      if (s.scan.domain != Domain::target) {
        throw Error(ErrorCode::InvalidGrade,
                    "line " + std::to_string(line_no) + ": empty grade only allowed for target");
      }
    } else {
      s.label = parse_grade(fields[2]);
      s.eval_only = s.scan.domain == Domain::target;
    }
    std::filesystem::path image_path = fields[0];
    if (image_path.is_relative()) image_path = base / image_path;
    if (!std::filesystem::exists(image_path)) {
      throw Error(ErrorCode::MissingImage, image_path.string());
    }
    s.scan.image_id = image_path.stem().string();
    s.scan.patient_id = fields[1];
    s.scan.pixels = normalize_bscan(read_png(image_path));
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, path.string());
  const Domain domain = domains.size() == 1 ? *domains.begin() : Domain::mixed;
  return Dataset(domain, std::move(samples));
}

void write_manifest(const Dataset& dataset, const std::filesystem::path& csv_path,
                    const std::filesystem::path& image_dir) {
  std::filesystem::create_directories(image_dir);
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  const auto base = csv_path.has_parent_path() ? csv_path.parent_path()
                                               : std::filesystem::current_path();
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + csv_path.string());
  out << kManifestHeader << '\n';
  for (const auto& s : dataset.samples()) {
    const auto png = image_dir / (s.scan.image_id + ".png");
    write_png(png, quantize_gray(s.scan.pixels));
    const auto rel = std::filesystem::relative(png, base);
    out << rel.generic_string() << ',' << s.scan.patient_id << ',';
    if (s.label) out << index_of(*s.label);
    out << ',' << to_string(s.scan.domain) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + csv_path.string());
}

// ---------------------------------------------------------------------------
// synthetic phantom

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{
      {"n_patients_source", c.n_patients_source},
      {"n_patients_target", c.n_patients_target},
      {"samples_per_patient", {c.min_samples_per_patient, c.max_samples_per_patient}},
      {"shift",
       {{"contrast_factor", c.shift.contrast_factor},
        {"noise_std", c.shift.noise_std},
        {"brightness_offset", c.shift.brightness_offset}}},
      {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.n_patients_source = j.value("n_patients_source", c.n_patients_source);
  c.n_patients_target = j.value("n_patients_target", c.n_patients_target);
  if (j.contains("samples_per_patient")) {
    const auto& r = j.at("samples_per_patient");
    c.min_samples_per_patient = r.at(0).get<int>();
    c.max_samples_per_patient = r.at(1).get<int>();
  }
  if (j.contains("shift")) {
    const auto& s = j.at("shift");
    c.shift.contrast_factor = s.value("contrast_factor", c.shift.contrast_factor);
    c.shift.noise_std = s.value("noise_std", c.shift.noise_std);
    c.shift.brightness_offset = s.value("brightness_offset", c.shift.brightness_offset);
  }
  c.seed = j.value("seed", c.seed);
}

namespace {

struct Layer {
  double thickness;
  double intensity;
};

// Retinal layers below the bright band, top to bottom.
constexpr Layer kLowerLayers[] = {
    {22.0, 0.42},  // ganglion / plexiform
    {18.0, 0.22},  // nuclear
    {28.0, 0.12},  // outer nuclear
    {8.0, 0.70},   // pigment epithelium
    {30.0, 0.32},  // choroid
};
constexpr double kVitreous = 0.04;
constexpr double kBand = 0.90;
constexpr double kDeep = 0.10;

// Length of [y, y+1) covered by [lo, hi).
double coverage(int y, double lo, double hi) {
  return std::max(0.0, std::min(hi, y + 1.0) - std::max(lo, static_cast<double>(y)));
}

}  // namespace

std::pair<double, double> thickness_range(GradeLabel grade) {
  switch (grade) {
    case GradeLabel::healthy: return {30.0, 40.0};
    case GradeLabel::early: return {20.0, 28.0};
    case GradeLabel::advanced: return {10.0, 18.0};
  }
  return {0.0, 0.0};
}

BandParams draw_band_params(GradeLabel grade, Rng& rng) {
  const auto [lo, hi] = thickness_range(grade);
  BandParams p;
  p.top = rng.uniform(30.0, 50.0);
  p.thickness = rng.uniform(lo, hi);
  p.undulation = rng.uniform(3.0, 10.0);
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.hump_depth = rng.uniform(0.2, 0.35);
  p.speckle_std = 0.03;
  return p;
}

Matrix render_bands(const BandParams& p) {
  Matrix m(kScanRows, kScanCols);
  for (int x = 0; x < kScanCols; ++x) {
    const double angle = 2.0 * std::numbers::pi * x / kScanCols;
    const double top = p.top + p.undulation * std::sin(angle + p.phase);
    const double thick = p.thickness * (1.0 + p.hump_depth * std::cos(2.0 * angle + p.phase));
    for (int y = 0; y < kScanRows; ++y) {
      double v = kVitreous * coverage(y, -1e9, top);
      double edge = top + thick;
      v += kBand * coverage(y, top, edge);
      for (const Layer& layer : kLowerLayers) {
        v += layer.intensity * coverage(y, edge, edge + layer.thickness);
        edge += layer.thickness;
      }
      v += kDeep * coverage(y, edge, 1e9);
      m(y, x) = v;
    }
  }
  return m;
}

Matrix acquire(const Matrix& clean, double speckle_std, const DomainShift* shift, Rng& rng) {
  Matrix m = clean;
  for (double& v : m.data) {
    v += speckle_std * rng.normal();
    if (shift) {
      v = shift->contrast_factor * v + shift->brightness_offset + shift->noise_std * rng.normal();
    }
    v = std::clamp(v, 0.0, 1.0);
  }
  return m;
}

double measure_band_thickness(const Matrix& clean) {
  // Pixels of the first bright run below the vitreous, weighted by how far
  // they rise above the next layer.
  constexpr double lower = kLowerLayers[0].intensity;
  double total = 0.0;
  for (int x = 0; x < clean.cols; ++x) {
    int y = 0;
    while (y < clean.rows && clean(y, x) < 0.5 * (kVitreous + kBand)) ++y;
    if (y > 0) {
      const double frac = (clean(y - 1, x) - kVitreous) / (kBand - kVitreous);
      total += std::clamp(frac, 0.0, 1.0);
    }
    while (y < clean.rows && clean(y, x) > lower + 1e-9) {
      const double frac = (clean(y, x) - lower) / (kBand - lower);
      total += std::clamp(frac, 0.0, 1.0);
      ++y;
    }
  }
  return total / clean.cols;
}

namespace {

Matrix quantized(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

std::string patient_name(char prefix, int index) {
  std::ostringstream os;
  os << prefix;
  os.width(3);
  os.fill('0');
  os << index + 1;
  return os.str();
}

Dataset generate_domain(Domain domain, int n_patients, const SynthConfig& config, Rng& rng,
                        std::vector<SynthSampleInfo>& info) {
  const char prefix = domain == Domain::source ? 'S' : 'T';
  const DomainShift* shift = domain == Domain::target ? &config.shift : nullptr;
  std::vector<Sample> samples;
  for (int p = 0; p < n_patients; ++p) {
    const GradeLabel grade = grade_from_index(p % kNumClasses);
    const BandParams base = draw_band_params(grade, rng);
    const int span = config.max_samples_per_patient - config.min_samples_per_patient + 1;
    const int count = config.min_samples_per_patient + static_cast<int>(rng.index(span));
    const auto patient = patient_name(prefix, p);
    const auto [lo, hi] = thickness_range(grade);
    for (int k = 0; k < count; ++k) {
      BandParams params = base;
      // Repeat scans of one eye: same anatomy, slightly different placement.
      params.thickness = std::clamp(base.thickness + 0.5 * rng.normal(), lo, std::nextafter(hi, lo));
      params.top = base.top + 2.0 * rng.normal();
      params.phase = base.phase + 0.1 * rng.normal();
      Sample s;
      s.scan.image_id = patient + "_" + std::to_string(k + 1);
      s.scan.patient_id = patient;
      s.scan.domain = domain;
      s.scan.pixels = quantized(acquire(render_bands(params), params.speckle_std, shift, rng));
      s.label = grade;
      s.eval_only = domain == Domain::target;
      info.push_back({s.scan.image_id, grade, params});
      samples.push_back(std::move(s));
    }
  }
  return Dataset(domain, std::move(samples));
}

}  // namespace

SynthOutput generate_synthetic(const SynthConfig& config) {
  if (config.n_patients_source <= 0 || config.n_patients_target <= 0 ||
      config.min_samples_per_patient <= 0 ||
      config.max_samples_per_patient < config.min_samples_per_patient) {
    throw Error(ErrorCode::InvalidConfig, "patient and sample counts must be positive");
  }
  if (!(config.shift.contrast_factor > 0.0) || config.shift.noise_std < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "contrast_factor must be > 0 and noise_std >= 0");
  }
  Rng rng(config.seed);
  SynthOutput out;
  out.source = generate_domain(Domain::source, config.n_patients_source, config, rng, out.info);
  out.target = generate_domain(Domain::target, config.n_patients_target, config, rng, out.info);
  return out;
}

void write_synthetic(const SynthOutput& data, const SynthConfig& config,
                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_manifest(data.source, out_dir / "source.csv", out_dir / "images");
  write_manifest(data.target, out_dir / "target.csv", out_dir / "images");
  nlohmann::json meta;
  meta["config"] = config;
  meta["seed"] = config.seed;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : data.info) {
    rows.push_back({{"image_id", s.image_id},
                    {"grade", index_of(s.grade)},
                    {"band_thickness", s.params.thickness},
                    {"band_top", s.params.top}});
  }
  meta["samples"] = rows;
  std::ofstream out(out_dir / "synth_meta.json", std::ios::binary);
  out << meta.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write synth_meta.json");
}

}  // namespace octgrade
