#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckd/curriculum.hpp"
#include "ckd/dataio.hpp"
#include "ckd/distill.hpp"
#include "ckd/model.hpp"
#include "ckd/training.hpp"

namespace ckd {

// One JSON document drives every command. Absent keys fall back to the
// documented defaults; unknown keys are hard errors so typos cannot
// silently deactivate an option. The seed has no default.

struct TeacherRef {
  std::string kind;     // "checkpoint" (live model) or "scores" (file)
  std::string path;
  double weight = -1.0;  // negative = unassigned, resolved to uniform
};

// Recipe for pretrain-teacher: which source domains feed the first phase
// (indices into data.sources) and whether to fine-tune on the target train
// split afterwards.
struct TeacherTrainConfig {
  ModelConfig model;
  std::vector<std::size_t> sources;
  bool tune_on_target = true;
};

struct SweepGrid {
  std::vector<double> temperature;
  std::vector<double> kd_weight;
  std::vector<double> alpha;
  std::vector<std::size_t> embedding_dim;

  bool empty() const {
    return temperature.empty() && kd_weight.empty() && alpha.empty() &&
           embedding_dim.empty();
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "f64";  // f32 | f64

  std::string data_target;                 // target-domain TSV
  std::vector<std::string> data_sources;   // source-domain TSVs

  SyntheticSpec synthetic;
  std::string synthetic_out = "data";

  ModelConfig model;                 // the student
  TeacherTrainConfig teacher_train;  // for pretrain-teacher
  std::vector<TeacherRef> teachers;  // panel for train

  DistillationConfig distill;
  CurriculumConfig curriculum;
  TrainSettings optimizer;
  std::vector<int> cutoffs = {5, 10, 20};

  SweepGrid sweep;
};

// Parses, applies defaults, validates ranges. Throws naming the offending
// key. Overrides are dotted key=value pairs (e.g. distill.temperature=0.5)
// applied on top of the file before validation; the key must already be a
// known config key.
RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& overrides = {});

// Same, but from a JSON string (tests use this to avoid temp files).
RunConfig parse_config(const std::string& text,
                       const std::vector<std::string>& overrides = {});

}  // namespace ckd
