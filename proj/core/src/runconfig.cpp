#include "pipefold/runconfig.hpp"

#include <json.hpp>

#include "pipefold/errors.hpp"
#include "pipefold/fsio.hpp"

namespace pipefold {

void RunConfig::validate() const {
  if (!seed_set) throw ConfigError("run config: seed is mandatory");
  if (finetune_variant != "reconstruction" && finetune_variant != "general")
    throw ConfigError("run config: finetune_variant must be 'reconstruction' or 'general'");
  if (task.len_max + 2 > model.l_max)
    throw ConfigError("run config: len_max + 2 exceeds l_max");
  // Canonical pivot renderings may use a two-letter variant per character.
  if (2 * task.len_max + 2 > model.l_max)
    throw ConfigError("run config: l_max must be at least 2 * len_max + 2 to hold pivot words");
  if (task.n_scripts < 2) throw ConfigError("run config: need at least two scripts");
}

RunConfig default_run_config() {
  RunConfig c;
  c.task = CorpusConfig{};
  c.model = ModelConfig{};
  c.teacher = TrainHyper{.epochs = 6, .batch_size = 32, .lr = 1e-3f, .seed = 0, .patience = 3,
                         .target = 0.97};
  c.encoder_distill = TrainHyper{.epochs = 8, .batch_size = 32, .lr = 5e-4f, .seed = 0,
                                 .patience = 3, .target = 0.97};
  c.decoder_finetune = TrainHyper{.epochs = 4, .batch_size = 32, .lr = 2e-4f, .seed = 0,
                                  .patience = 3, .target = 0.97};
  return c;
}

namespace {

void read_hyper(const nlohmann::json& j, TrainHyper& h) {
  if (j.contains("epochs")) h.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) h.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) h.lr = j.at("lr").get<float>();
  if (j.contains("patience")) h.patience = j.at("patience").get<int>();
  if (j.contains("target")) h.target = j.at("target").get<double>();
}

nlohmann::json hyper_to_json(const TrainHyper& h) {
  return {{"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"lr", h.lr},
          {"patience", h.patience},
          {"target", h.target}};
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_run_config();
  try {
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.seed_set = true;
    }
    if (j.contains("task")) {
      const auto& t = j.at("task");
      if (t.contains("n_scripts")) c.task.n_scripts = t.at("n_scripts").get<int>();
      if (t.contains("alphabet_size")) c.task.alphabet_size = t.at("alphabet_size").get<int>();
      if (t.contains("ambiguity_rate")) c.task.ambiguity_rate = t.at("ambiguity_rate").get<double>();
      if (t.contains("words_per_script")) c.task.words_per_script = t.at("words_per_script").get<int>();
      if (t.contains("len_min")) c.task.len_min = t.at("len_min").get<int>();
      if (t.contains("len_max")) c.task.len_max = t.at("len_max").get<int>();
      if (t.contains("train_fraction")) c.task.train_fraction = t.at("train_fraction").get<double>();
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.contains("d_model")) c.model.d_model = m.at("d_model").get<int>();
      if (m.contains("n_heads")) c.model.n_heads = m.at("n_heads").get<int>();
      if (m.contains("n_layers")) c.model.n_layers = m.at("n_layers").get<int>();
      if (m.contains("ff_dim")) c.model.ff_dim = m.at("ff_dim").get<int>();
      if (m.contains("l_max")) c.model.l_max = m.at("l_max").get<int>();
      if (m.contains("dropout")) c.model.dropout = m.at("dropout").get<float>();
    }
    if (j.contains("teacher")) read_hyper(j.at("teacher"), c.teacher);
    if (j.contains("encoder_distill")) read_hyper(j.at("encoder_distill"), c.encoder_distill);
    if (j.contains("decoder_finetune")) read_hyper(j.at("decoder_finetune"), c.decoder_finetune);
    if (j.contains("finetune_variant")) c.finetune_variant = j.at("finetune_variant").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config has a malformed field: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json_text(read_file(path));
}

std::string run_config_to_json(const RunConfig& c) {
  nlohmann::json j = {
      {"seed", c.seed},
      {"task",
       {{"n_scripts", c.task.n_scripts},
        {"alphabet_size", c.task.alphabet_size},
        {"ambiguity_rate", c.task.ambiguity_rate},
        {"words_per_script", c.task.words_per_script},
        {"len_min", c.task.len_min},
        {"len_max", c.task.len_max},
        {"train_fraction", c.task.train_fraction}}},
      {"model",
       {{"d_model", c.model.d_model},
        {"n_heads", c.model.n_heads},
        {"n_layers", c.model.n_layers},
        {"ff_dim", c.model.ff_dim},
        {"l_max", c.model.l_max},
        {"dropout", c.model.dropout}}},
      {"teacher", hyper_to_json(c.teacher)},
      {"encoder_distill", hyper_to_json(c.encoder_distill)},
      {"decoder_finetune", hyper_to_json(c.decoder_finetune)},
      {"finetune_variant", c.finetune_variant}};
  return j.dump(2) + "\n";
}

}  // namespace pipefold
