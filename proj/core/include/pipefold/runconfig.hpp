#pragma once

#include <cstdint>
#include <string>

#include "pipefold/distill.hpp"
#include "pipefold/model.hpp"
#include "pipefold/taskgen.hpp"

namespace pipefold {

// One JSON document drives a whole run; command line flags override single
// fields. The seed is mandatory: no command draws entropy on its own.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;

  CorpusConfig task;          // task.seed is filled from the run seed
  ModelConfig model;          // vocab_size / n_languages are derived from the task
  TrainHyper teacher;
  TrainHyper encoder_distill;
  TrainHyper decoder_finetune;
  std::string finetune_variant = "reconstruction";  // or "general"

  void validate() const;  // throws ConfigError
};

// Defaults sized for a desk-scale CPU run.
RunConfig default_run_config();

RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Round-trip of the resolved configuration, used by every command to print
// what it is about to do.
std::string run_config_to_json(const RunConfig& config);

}  // namespace pipefold
