#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "ckd/config.hpp"
#include "ckd/distill.hpp"
#include "ckd/eval.hpp"
#include "ckd/teacher.hpp"

namespace ckd {

// Command implementations behind the CLI, kept callable from tests. Every
// command is deterministic given the config (seeds are explicit) and throws
// std::runtime_error with a one-line message on failure.

struct LoadedData {
  DomainGroup group;                        // target first, shared item ids
  SplitDataset target_split;
  std::vector<SplitDataset> source_splits;  // aligned with data_sources
};

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error(what + " not found: '" + path + "'");
}

inline LoadedData load_run_data(const RunConfig& run, bool need_sources) {
  if (run.data_target.empty())
    throw std::runtime_error("config: missing required key 'data.target'");
  require_file(run.data_target, "dataset");
  std::vector<std::string> paths = {run.data_target};
  if (need_sources) {
    if (run.data_sources.empty())
      throw std::runtime_error("config: missing required key 'data.sources'");
    for (const auto& s : run.data_sources) {
      require_file(s, "dataset");
      paths.push_back(s);
    }
  }
  LoadedData data;
  data.group = load_domain_group(paths);
  data.target_split = leave_one_out_split(data.group.domains[0]);
  for (std::size_t i = 1; i < data.group.domains.size(); ++i)
    data.source_splits.push_back(leave_one_out_split(data.group.domains[i]));
  return data;
}

// Concatenates several domains (already on union item ids) into one corpus
// for a pre-training phase.
inline InteractionDataset merge_domains(
    const DomainGroup& group, const std::vector<std::size_t>& source_indices) {
  InteractionDataset merged;
  merged.item_names = group.item_names;
  merged.domain_tag = "merged";
  for (std::size_t idx : source_indices) {
    const std::size_t domain = idx + 1;  // sources sit after the target
    if (domain >= group.domains.size())
      throw std::runtime_error("teacher_train.sources: index " +
                               std::to_string(idx) + " out of range (" +
                               std::to_string(group.domains.size() - 1) +
                               " sources loaded)");
    const auto& d = group.domains[domain];
    for (std::size_t u = 0; u < d.sequences.size(); ++u) {
      merged.user_names.push_back(d.domain_tag + "/" + d.user_names[u]);
      merged.sequences.push_back(d.sequences[u]);
    }
  }
  if (merged.sequences.empty())
    throw std::runtime_error("pretrain: no source users selected");
  return merged;
}

inline void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---- gen-data ----

inline std::vector<std::string> cmd_gen_data(const RunConfig& run) {
  return generate_synthetic(run.synthetic, run.synthetic_out);
}

// ---- pretrain-teacher ----

template <typename T>
SequentialModel<T> pretrain_from_config(const RunConfig& run,
                                        const LoadedData& data) {
  std::vector<SplitDataset> phase_storage;
  if (!run.teacher_train.sources.empty())
    phase_storage.push_back(leave_one_out_split(
        merge_domains(data.group, run.teacher_train.sources)));
  if (run.teacher_train.tune_on_target)
    phase_storage.push_back(data.target_split);
  if (phase_storage.empty())
    throw std::runtime_error(
        "teacher_train: no sources selected and tune_on_target is false");
  std::vector<const SplitDataset*> phases;
  for (const auto& p : phase_storage) phases.push_back(&p);
  return pretrain_teacher<T>(phases, data.group.item_names.size(),
                             run.teacher_train.model, run.optimizer, run.seed);
}

template <typename T>
void cmd_pretrain_teacher(const RunConfig& run, const std::string& out_path) {
  const auto data = load_run_data(run, !run.teacher_train.sources.empty());
  const auto model = pretrain_from_config<T>(run, data);
  ensure_parent_dir(out_path);
  model.save(out_path);
}

// ---- export-teacher ----

template <typename T>
void cmd_export_teacher(const RunConfig& run, const std::string& teacher_path,
                        const std::string& out_path) {
  require_file(teacher_path, "checkpoint");
  const auto model = SequentialModel<T>::load(teacher_path);
  const auto data = load_run_data(run, false);
  const auto matrix = export_score_matrix(model, data.target_split);
  ensure_parent_dir(out_path);
  matrix.save(out_path);
}

// ---- train ----

template <typename T>
TeacherPanel load_panel(const RunConfig& run) {
  TeacherPanel panel;
  for (const auto& ref : run.teachers) {
    require_file(ref.path, "teacher");
    if (ref.kind == "checkpoint") {
      panel.teachers.push_back(std::make_shared<ModelTeacher<T>>(
          SequentialModel<T>::load(ref.path), ref.path));
    } else {
      panel.teachers.push_back(
          std::make_shared<FileTeacher>(ScoreMatrix::open(ref.path), ref.path));
    }
    panel.base_weights.push_back(ref.weight);
  }
  const bool unassigned =
      !panel.base_weights.empty() && panel.base_weights.front() < 0.0;
  if (unassigned)
    panel.base_weights.assign(panel.teachers.size(),
                              1.0 / static_cast<double>(panel.teachers.size()));
  return panel;
}

template <typename T>
void cmd_train(const RunConfig& run, const std::string& out_dir) {
  const auto data = load_run_data(run, false);
  auto student = SequentialModel<T>::init(
      run.model, data.group.target_items, run.seed);
  TeacherPanel panel;
  if (run.distill.kd_weight > 0.0 && !run.teachers.empty())
    panel = load_panel<T>(run);

  const auto result =
      distill_train(student, panel, data.target_split, run.distill,
                    run.curriculum, run.optimizer, run.seed);
  const auto report =
      evaluate_split(student, data.target_split.test, run.cutoffs);

  std::filesystem::create_directories(out_dir);
  std::string log_text;
  for (const auto& line : result.log_lines) log_text += line + "\n";
  write_text_file(out_dir + "/metrics.log", log_text);
  write_text_file(out_dir + "/report.json", report_to_json(report) + "\n");
  student.save(out_dir + "/student.ckpt");
}

// ---- evaluate ----

template <typename T>
std::string cmd_evaluate(const RunConfig& run,
                         const std::string& checkpoint_path) {
  require_file(checkpoint_path, "checkpoint");
  const auto model = SequentialModel<T>::load(checkpoint_path);
  const auto data = load_run_data(run, false);
  const auto report =
      evaluate_split(model, data.target_split.test, run.cutoffs);
  return report_to_json(report);
}

// ---- sweep ----

template <typename T>
std::string cmd_sweep(const RunConfig& run, const std::string& out_dir) {
  // Absent grid dimensions fall back to the base config's single value.
  const auto taus = run.sweep.temperature.empty()
                        ? std::vector<double>{run.distill.temperature}
                        : run.sweep.temperature;
  const auto lambdas = run.sweep.kd_weight.empty()
                           ? std::vector<double>{run.distill.kd_weight}
                           : run.sweep.kd_weight;
  const auto alphas = run.sweep.alpha.empty()
                          ? std::vector<double>{run.curriculum.alpha}
                          : run.sweep.alpha;
  const auto dims = run.sweep.embedding_dim.empty()
                        ? std::vector<std::size_t>{run.model.embedding_dim}
                        : run.sweep.embedding_dim;

  const auto data = load_run_data(run, false);
  std::filesystem::create_directories(out_dir);

  std::string table =
      "temperature\tkd_weight\talpha\tembedding_dim\trecall@10\tndcg@10\n";
  std::size_t cell = 0;
  for (double tau : taus)
    for (double lambda : lambdas)
      for (double alpha : alphas)
        for (std::size_t dim : dims) {
          RunConfig variant = run;
          variant.distill.temperature = tau;
          variant.distill.kd_weight = lambda;
          variant.curriculum.alpha = alpha;
          variant.model.embedding_dim = dim;
          variant.distill.validate();
          variant.model.validate();

          auto student = SequentialModel<T>::init(
              variant.model, data.group.target_items, variant.seed);
          TeacherPanel panel;
          if (variant.distill.kd_weight > 0.0 && !variant.teachers.empty())
            panel = load_panel<T>(variant);
          const auto result = distill_train(
              student, panel, data.target_split, variant.distill,
              variant.curriculum, variant.optimizer, variant.seed);
          const auto report =
              evaluate_split(student, data.target_split.test, {10});

          char row[256];
          std::snprintf(row, sizeof(row),
                        "%g\t%g\t%g\t%zu\t%.6f\t%.6f\n", tau, lambda, alpha,
                        dim, report.recall_at(10), report.ndcg_at(10));
          table += row;

          std::string log_text;
          for (const auto& line : result.log_lines) log_text += line + "\n";
          char cell_dir[64];
          std::snprintf(cell_dir, sizeof(cell_dir), "cell_%03zu", cell++);
          write_text_file(out_dir + "/" + cell_dir + "/metrics.log", log_text);
        }
  write_text_file(out_dir + "/sweep.tsv", table);
  return table;
}

}  // namespace ckd
