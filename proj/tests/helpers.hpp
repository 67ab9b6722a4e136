#pragma once

#include <doctest.h>

#include <filesystem>
#include <string>

#include "octgrade/dataset.hpp"
#include "octgrade/error.hpp"
#include "octgrade/model.hpp"

namespace testutil {

#define CHECK_ERROR_CODE(expr, expected)                        \
  do {                                                          \
    bool thrown_ = false;                                       \
    try {                                                       \
      (void)(expr);                                             \
    } catch (const octgrade::Error& e_) {                       \
      thrown_ = true;                                           \
      CHECK_MESSAGE(e_.code() == (expected), e_.what());        \
    }                                                           \
    CHECK_MESSAGE(thrown_, "expected " #expected);              \
  } while (0)

inline octgrade::SynthConfig small_synth(std::uint64_t seed, int source = 9, int target = 9) {
  octgrade::SynthConfig c;
  c.n_patients_source = source;
  c.n_patients_target = target;
  c.seed = seed;
  return c;
}

inline octgrade::ModelConfig tiny_model(octgrade::Architecture arch = octgrade::Architecture::ragnet_v2,
                                        octgrade::Backbone backbone = octgrade::Backbone::vgg19) {
  octgrade::ModelConfig m;
  m.architecture = arch;
  m.backbone = backbone;
  m.input_height = 48;
  m.input_width = 64;
  m.width_divisor = 16;
  return m;
}

inline octgrade::BScan constant_scan(const std::string& id, double value) {
  octgrade::BScan s;
  s.image_id = id;
  s.patient_id = "P" + id;
  s.pixels = octgrade::Matrix(octgrade::kScanRows, octgrade::kScanCols, value);
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("octgrade_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
