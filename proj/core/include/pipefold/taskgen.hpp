#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pipefold/model.hpp"

namespace pipefold {

// The synthetic task: n disjoint scripts plus one shared pivot script. Each
// script character maps to one or two pivot strings (its phonetic variants);
// all scripts partition the same prefix-free variant universe, so any pivot
// word parses back into any script unambiguously while different scripts can
// group variants differently. That grouping difference is what creates
// multiple phonetically acceptable target renderings.

inline const std::string kPivotName = "pivot";

struct ScriptSpec {
  std::string id;
  std::vector<std::string> alphabet;  // single code points, disjoint across scripts
  int size() const { return static_cast<int>(alphabet.size()); }
};

struct PivotTable {
  std::vector<std::string> universe;              // prefix-free pivot strings, length 1-2
  std::map<std::string, int> variant_index;       // string -> index into universe
  // per script: cells[char index] = variant indices; inverse[variant] = char
  std::map<std::string, std::vector<std::vector<int>>> cells;
  std::map<std::string, std::vector<int>> canonical;  // char index -> variant index
  std::map<std::string, std::vector<int>> inverse;    // variant index -> char index
};

struct TaskTables {
  std::vector<ScriptSpec> scripts;
  std::vector<std::string> pivot_alphabet;  // 'a'..'z'
  PivotTable pivot;

  const ScriptSpec& script(const std::string& id) const;
  bool has_script(const std::string& id) const;
};

enum class DatasetFormat { UniToPivot, UniFromPivot, Bi };
enum class Direction { ToPivot, FromPivot };

std::string format_name(DatasetFormat f);
DatasetFormat parse_format(const std::string& name);

struct PairRecord {
  std::string src_lang;
  std::string src_word;
  std::string tgt_lang;
  std::string tgt_word;
  Direction direction = Direction::ToPivot;

  bool operator==(const PairRecord&) const = default;
};

struct ChainedExample {
  std::string source;
  std::string pivot;   // canonical rendering
  std::string target;  // canonical rendering in the target script
  std::set<std::string> allowed_targets;
};

// Deterministic table construction. Throws ConstructionError when the pivot
// space cannot hold the requested variant inventory, ConfigError on invalid
// parameters (n_scripts in [2,6], alphabet_size in [8,64], rate in [0,1]).
TaskTables build_tables(std::uint64_t seed, int n_scripts, int alphabet_size,
                        double ambiguity_rate);

// n distinct words, lengths uniform in [len_min, len_max], characters
// uniform over the script alphabet. Throws ExhaustionError when fewer than n
// distinct words exist.
std::vector<std::string> sample_words(int n, int len_min, int len_max, const ScriptSpec& script,
                                      std::uint64_t seed);

// Word-level table operations. Words with characters outside the script
// raise AlphabetError; unparseable pivot words raise ValueError.
std::string render_canonical(const TaskTables& tables, const std::string& script_id,
                             const std::string& word);
std::vector<int> parse_pivot(const TaskTables& tables, const std::string& pivot_word);
std::string render_from_pivot(const TaskTables& tables, const std::string& script_id,
                              const std::string& pivot_word);

std::vector<PairRecord> make_dataset(DatasetFormat format, const TaskTables& tables,
                                     const std::map<std::string, std::vector<std::string>>& words_per_script);

ChainedExample chained_ground_truth(const std::string& word, const std::string& src_script,
                                    const std::string& tgt_script, const TaskTables& tables);

// Vocabulary over all script characters plus the pivot letters, language
// tokens for the pivot and every script.
Vocab build_task_vocab(const TaskTables& tables);

TokenSequence to_sequence(const Vocab& vocab, const std::string& word,
                          const std::string& lang_name);

// ---- corpus ----------------------------------------------------------------

struct CorpusConfig {
  std::uint64_t seed = 0;
  int n_scripts = 4;
  int alphabet_size = 24;
  double ambiguity_rate = 0.3;
  int words_per_script = 8000;
  int len_min = 3;
  int len_max = 10;
  double train_fraction = 0.9;
};

struct Corpus {
  TaskTables tables;
  std::map<std::string, std::vector<std::string>> train_words;
  std::map<std::string, std::vector<std::string>> test_words;

  std::vector<std::string> script_ids() const;
};

// Seeded end-to-end generation: tables, per-script word lists, 90/10 split
// by word. The split keeps every test word out of all training pairs.
Corpus build_corpus(const CorpusConfig& config);

// ---- text formats ----------------------------------------------------------
// One record per line: src_lang <TAB> src_word <TAB> tgt_lang <TAB> tgt_word.
// Allowed-variant files: src_word <TAB> variant1|variant2|...

std::string pairs_to_text(const std::vector<PairRecord>& records);
std::vector<PairRecord> pairs_from_text(const std::string& text);
void write_pairs(const std::string& path, const std::vector<PairRecord>& records);
std::vector<PairRecord> read_pairs(const std::string& path);

std::string allowed_to_text(const std::vector<ChainedExample>& examples);
std::map<std::string, std::set<std::string>> allowed_from_text(const std::string& text);
void write_allowed(const std::string& path, const std::vector<ChainedExample>& examples);
std::map<std::string, std::set<std::string>> read_allowed(const std::string& path);

}  // namespace pipefold
