// pipefold: condense a two-stage encoder-decoder pipeline into a single
// model by knowledge distillation, on a synthetic pivot-chained
// character-transduction task.
//
// Workflow: gen-data -> train-teacher -> distill-encoder -> finetune-decoder
// -> eval -> bench, composed through files.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pipefold/errors.hpp"
#include "pipefold/runconfig.hpp"
#include "pipefold/workflow.hpp"

namespace {

using namespace pipefold;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig config = args.config_path.empty() ? default_run_config()
                                              : load_run_config(args.config_path);
  if (args.seed_given) {
    config.seed = args.seed;
    config.seed_set = true;
  }
  config.validate();
  return config;
}

void print_resolved(const std::string& command, const RunConfig& config) {
  std::cout << "[" << command << "] resolved configuration:\n" << run_config_to_json(config);
}

void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw InputError("missing required input: " + flag);
}

void print_log(const TrainLog& log) {
  for (std::size_t i = 0; i < log.epoch_loss.size(); ++i)
    std::cout << "  epoch " << i << ": loss " << log.epoch_loss[i] << ", held-out metric "
              << log.epoch_metric[i] << "\n";
  std::cout << "  best epoch " << log.best_epoch << " (metric " << log.best_metric << ")";
  if (log.skipped) std::cout << ", skipped examples: " << log.skipped;
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pipeline condensation by two-phase knowledge distillation"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, out_path, teacher_path, student_enc_path, student_path, dump_dir, variant;
  int bench_words = 500, bench_reps = 10;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "run configuration JSON");
    cmd->add_option("--seed", common.seed, "seed override (mandatory here or in the config)")
        ->each([&](const std::string&) { common.seed_given = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic task corpus");
  add_common(gen);
  gen->add_option("--out", out_path, "output directory")->required();

  CLI::App* teach = app.add_subcommand("train-teacher", "train the bidirectional teacher");
  add_common(teach);
  teach->add_option("--data", data_dir, "data directory from gen-data")->required();
  teach->add_option("--out", out_path, "teacher checkpoint path")->required();

  CLI::App* dist = app.add_subcommand("distill-encoder", "align the student encoder (phase 1)");
  add_common(dist);
  dist->add_option("--data", data_dir, "data directory")->required();
  dist->add_option("--teacher", teacher_path, "teacher checkpoint");
  dist->add_option("--out", out_path, "student-encoder checkpoint path")->required();

  CLI::App* fine = app.add_subcommand("finetune-decoder", "finetune the student decoder (phase 2)");
  add_common(fine);
  fine->add_option("--data", data_dir, "data directory")->required();
  fine->add_option("--teacher", teacher_path, "teacher checkpoint");
  fine->add_option("--student-encoder", student_enc_path, "student-encoder checkpoint");
  fine->add_option("--out", out_path, "student checkpoint path")->required();
  fine->add_option("--variant", variant, "reconstruction|general (default from config)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate teacher pipeline vs student");
  add_common(eval);
  eval->add_option("--data", data_dir, "data directory")->required();
  eval->add_option("--teacher", teacher_path, "teacher checkpoint");
  eval->add_option("--student", student_path, "student checkpoint");
  eval->add_option("--out", out_path, "metrics report path")->required();
  eval->add_option("--dump-dir", dump_dir, "directory for per-word records");

  CLI::App* bench = app.add_subcommand("bench", "CPU latency benchmark, pipeline vs student");
  add_common(bench);
  bench->add_option("--data", data_dir, "data directory")->required();
  bench->add_option("--teacher", teacher_path, "teacher checkpoint");
  bench->add_option("--student", student_path, "student checkpoint");
  bench->add_option("--out", out_path, "benchmark report path")->required();
  bench->add_option("--words", bench_words, "number of held-out words to time");
  bench->add_option("--reps", bench_reps, "repetitions per word");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config = resolve_config(common);

    if (gen->parsed()) {
      print_resolved("gen-data", config);
      workflow::generate_data(config, out_path);
      std::cout << "dataset written to " << out_path << "\n";
    } else if (teach->parsed()) {
      print_resolved("train-teacher", config);
      auto result = workflow::cmd_train_teacher(config, data_dir, out_path);
      print_log(result.log);
      std::cout << "teacher checkpoint " << out_path << " digest " << result.digest << "\n";
    } else if (dist->parsed()) {
      print_resolved("distill-encoder", config);
      require_path(teacher_path, "--teacher");
      auto result = workflow::cmd_distill_encoder(config, data_dir, teacher_path, out_path);
      print_log(result.log);
      std::cout << "student-encoder checkpoint " << out_path << " digest " << result.digest << "\n";
    } else if (fine->parsed()) {
      print_resolved("finetune-decoder", config);
      require_path(teacher_path, "--teacher");
      require_path(student_enc_path, "--student-encoder");
      auto result = workflow::cmd_finetune_decoder(config, data_dir, teacher_path,
                                                   student_enc_path, out_path, variant);
      print_log(result.log);
      std::cout << "student checkpoint " << out_path << " digest " << result.digest << "\n";
    } else if (eval->parsed()) {
      print_resolved("eval", config);
      require_path(teacher_path, "--teacher");
      require_path(student_path, "--student");
      auto result = workflow::cmd_eval(config, data_dir, teacher_path, student_path, out_path,
                                       dump_dir);
      std::cout << result.json;
      std::cout << "metrics report written to " << out_path << "\n";
    } else if (bench->parsed()) {
      print_resolved("bench", config);
      require_path(teacher_path, "--teacher");
      require_path(student_path, "--student");
      auto result = workflow::cmd_bench(config, data_dir, teacher_path, student_path, out_path,
                                        bench_words, bench_reps);
      std::cout << result.json;
      std::cout << "benchmark report written to " << out_path << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
