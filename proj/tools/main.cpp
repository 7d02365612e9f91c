#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ckd/pipeline.hpp"

namespace {

// Commands are templated on the numeric type; the config's precision field
// picks the instantiation at the last moment.
template <typename Fn>
int with_precision(const ckd::RunConfig& run, Fn&& fn) {
  if (run.precision == "f32") return fn(float{});
  return fn(double{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curriculum-scheduled multi-teacher distillation "
               "for sequential recommendation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string teacher_path;
  std::string checkpoint_path;
  std::vector<std::string> overrides;
  std::int64_t seed_flag = -1;

  auto* gen = app.add_subcommand(
      "gen-data", "write seeded synthetic interaction datasets");
  gen->add_option("--config", config_path, "run config (JSON)")->required();
  gen->add_option("--seed", seed_flag, "replace the config seed");

  auto* pre = app.add_subcommand(
      "pretrain-teacher", "train a teacher on its source domains");
  pre->add_option("--config", config_path, "run config (JSON)")->required();
  pre->add_option("--out", out_path, "checkpoint to write")->required();

  auto* exp = app.add_subcommand(
      "export-teacher", "freeze a teacher checkpoint into a score matrix");
  exp->add_option("--config", config_path, "run config (JSON)")->required();
  exp->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  exp->add_option("--out", out_path, "score matrix to write")->required();

  auto* train = app.add_subcommand(
      "train", "distill the student on the target domain");
  train->add_option("--config", config_path, "run config (JSON)")->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--override", overrides,
                    "key=value replacing a config entry (repeatable)");

  auto* ev = app.add_subcommand(
      "evaluate", "score a student checkpoint on the held-out test split");
  ev->add_option("--config", config_path, "run config (JSON)")->required();
  ev->add_option("--checkpoint", checkpoint_path, "student checkpoint")
      ->required();

  auto* sweep = app.add_subcommand(
      "sweep", "train and evaluate every cell of the config's grid");
  sweep->add_option("--config", config_path, "run config (JSON)")->required();
  sweep->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<std::string> config_overrides;
    if (train->parsed()) config_overrides = overrides;
    if (gen->parsed() && gen->count("--seed"))
      config_overrides.push_back("seed=" + std::to_string(seed_flag));
    const ckd::RunConfig run = ckd::load_config(config_path, config_overrides);

    if (gen->parsed()) {
      for (const auto& path : ckd::cmd_gen_data(run))
        std::cout << path << "\n";
      return 0;
    }
    if (pre->parsed())
      return with_precision(run, [&](auto tag) {
        ckd::cmd_pretrain_teacher<decltype(tag)>(run, out_path);
        std::cout << out_path << "\n";
        return 0;
      });
    if (exp->parsed())
      return with_precision(run, [&](auto tag) {
        ckd::cmd_export_teacher<decltype(tag)>(run, teacher_path, out_path);
        std::cout << out_path << "\n";
        return 0;
      });
    if (train->parsed())
      return with_precision(run, [&](auto tag) {
        ckd::cmd_train<decltype(tag)>(run, out_path);
        std::cout << out_path << "/student.ckpt\n";
        return 0;
      });
    if (ev->parsed())
      return with_precision(run, [&](auto tag) {
        std::cout << ckd::cmd_evaluate<decltype(tag)>(run, checkpoint_path)
                  << "\n";
        return 0;
      });
    if (sweep->parsed())
      return with_precision(run, [&](auto tag) {
        std::cout << ckd::cmd_sweep<decltype(tag)>(run, out_path);
        return 0;
      });
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
