#include "pipefold/taskgen.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pipefold/errors.hpp"
#include "pipefold/fsio.hpp"
#include "pipefold/rng.hpp"
#include "pipefold/utf8.hpp"

namespace pipefold {

// ---- fsio ------------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed for '" + path + "'");
  return buf.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path() /
                       (target.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out.good()) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temp file onto '" + path + "'");
  }
}

// ---- tables ----------------------------------------------------------------

const ScriptSpec& TaskTables::script(const std::string& id) const {
  for (const auto& s : scripts)
    if (s.id == id) return s;
  throw ValueError("unknown script '" + id + "'");
}

bool TaskTables::has_script(const std::string& id) const {
  for (const auto& s : scripts)
    if (s.id == id) return true;
  return false;
}

std::string format_name(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::UniToPivot: return "uni-to-pivot";
    case DatasetFormat::UniFromPivot: return "uni-from-pivot";
    case DatasetFormat::Bi: return "bi";
  }
  throw ValueError("bad DatasetFormat");
}

DatasetFormat parse_format(const std::string& name) {
  if (name == "uni-to-pivot") return DatasetFormat::UniToPivot;
  if (name == "uni-from-pivot") return DatasetFormat::UniFromPivot;
  if (name == "bi") return DatasetFormat::Bi;
  throw ValueError("unknown dataset format '" + name + "'");
}

TaskTables build_tables(std::uint64_t seed, int n_scripts, int alphabet_size,
                        double ambiguity_rate) {
  if (n_scripts < 2 || n_scripts > 6)
    throw ConfigError("build_tables: n_scripts must be in [2, 6]");
  if (alphabet_size < 8 || alphabet_size > 64)
    throw ConfigError("build_tables: alphabet_size must be in [8, 64]");
  if (ambiguity_rate < 0.0 || ambiguity_rate > 1.0)
    throw ConfigError("build_tables: ambiguity_rate must be in [0, 1]");

  TaskTables t;
  // Script alphabets: fixed contiguous code point blocks, disjoint by
  // construction and independent of the seed so the vocabulary is a pure
  // function of (n_scripts, alphabet_size).
  for (int s = 0; s < n_scripts; ++s) {
    ScriptSpec spec;
    spec.id = "s" + std::to_string(s);
    const char32_t base = static_cast<char32_t>(0x0100 + s * 0x40);
    for (int j = 0; j < alphabet_size; ++j)
      spec.alphabet.push_back(codepoint_to_utf8(base + static_cast<char32_t>(j)));
    t.scripts.push_back(std::move(spec));
  }
  for (char c = 'a'; c <= 'z'; ++c) t.pivot_alphabet.push_back(std::string(1, c));

  const int k = alphabet_size;
  const int extra = static_cast<int>(std::lround(ambiguity_rate * k));
  const int total = k + extra;

  // Variant universe: a few single letters plus two-letter strings whose
  // first letter is never a single, which keeps the set prefix-free and the
  // parse of any pivot word unique.
  const int n_single = std::clamp((total + 3) / 4, 1, 8);
  std::vector<std::string> letters = t.pivot_alphabet;
  auto ugen = seeded_stream(seed, 11);
  shuffle_inplace(letters, ugen);
  std::vector<std::string> singles(letters.begin(), letters.begin() + n_single);
  std::vector<std::string> doubles;
  for (std::size_t i = static_cast<std::size_t>(n_single); i < letters.size(); ++i)
    for (const auto& second : t.pivot_alphabet) doubles.push_back(letters[i] + second);
  if (total - n_single > static_cast<int>(doubles.size()))
    throw ConstructionError("build_tables: pivot space too small for " + std::to_string(total) +
                            " variants");
  shuffle_inplace(doubles, ugen);

  auto& pv = t.pivot;
  pv.universe = singles;
  pv.universe.insert(pv.universe.end(), doubles.begin(),
                     doubles.begin() + (total - n_single));
  shuffle_inplace(pv.universe, ugen);
  for (std::size_t i = 0; i < pv.universe.size(); ++i)
    pv.variant_index[pv.universe[i]] = static_cast<int>(i);

  // Each script partitions the universe into k cells; `extra` of them hold
  // two variants. Scripts partition independently, so a source character's
  // two variants may map to two different target characters.
  for (int s = 0; s < n_scripts; ++s) {
    const std::string& id = t.scripts[static_cast<std::size_t>(s)].id;
    auto gen = seeded_stream(seed, 100 + static_cast<std::uint64_t>(s));
    std::vector<int> perm(pv.universe.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    shuffle_inplace(perm, gen);

    std::vector<int> chars(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) chars[static_cast<std::size_t>(j)] = j;
    shuffle_inplace(chars, gen);
    std::vector<bool> ambiguous(static_cast<std::size_t>(k), false);
    for (int j = 0; j < extra; ++j) ambiguous[static_cast<std::size_t>(chars[static_cast<std::size_t>(j)])] = true;

    std::vector<std::vector<int>> cells(static_cast<std::size_t>(k));
    std::size_t next = 0;
    for (int c = 0; c < k; ++c) {
      const int take = ambiguous[static_cast<std::size_t>(c)] ? 2 : 1;
      for (int j = 0; j < take; ++j) cells[static_cast<std::size_t>(c)].push_back(perm[next++]);
      std::sort(cells[static_cast<std::size_t>(c)].begin(), cells[static_cast<std::size_t>(c)].end());
    }

    std::vector<int> inverse(pv.universe.size(), -1);
    for (int c = 0; c < k; ++c)
      for (int v : cells[static_cast<std::size_t>(c)]) inverse[static_cast<std::size_t>(v)] = c;

    auto cgen = seeded_stream(seed, 200 + static_cast<std::uint64_t>(s));
    std::vector<int> canonical(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c)
      canonical[static_cast<std::size_t>(c)] =
          cells[static_cast<std::size_t>(c)][uniform_u64(cgen, cells[static_cast<std::size_t>(c)].size())];

    pv.cells[id] = std::move(cells);
    pv.inverse[id] = std::move(inverse);
    pv.canonical[id] = std::move(canonical);
  }
  return t;
}

namespace {

int char_index(const ScriptSpec& script, const std::string& ch) {
  for (std::size_t i = 0; i < script.alphabet.size(); ++i)
    if (script.alphabet[i] == ch) return static_cast<int>(i);
  throw AlphabetError("character '" + ch + "' is not in script '" + script.id + "'");
}

std::vector<int> word_char_indices(const ScriptSpec& script, const std::string& word) {
  std::vector<int> out;
  for (const auto& ch : utf8_chars(word)) out.push_back(char_index(script, ch));
  return out;
}

}  // namespace

std::vector<std::string> sample_words(int n, int len_min, int len_max, const ScriptSpec& script,
                                      std::uint64_t seed) {
  if (n < 0) throw ValueError("sample_words: negative count");
  if (len_min < 1 || len_min > len_max) throw ValueError("sample_words: bad length range");
  if (n == 0) return {};

  const int k = script.size();
  double capacity = 0;
  for (int len = len_min; len <= len_max && capacity < 1e18; ++len)
    capacity += std::pow(static_cast<double>(k), len);
  if (static_cast<double>(n) > capacity)
    throw ExhaustionError("sample_words: only " + std::to_string(static_cast<long long>(capacity)) +
                          " distinct words exist, " + std::to_string(n) + " requested");

  auto gen = seeded_stream(seed, 7);

  // Exhaustive fallback when the space is barely larger than the request;
  // rejection sampling would crawl there.
  if (capacity <= 4.0 * n && capacity <= 2e6) {
    std::vector<std::string> all;
    for (int len = len_min; len <= len_max; ++len) {
      std::vector<int> idx(static_cast<std::size_t>(len), 0);
      while (true) {
        std::string w;
        for (int i : idx) w += script.alphabet[static_cast<std::size_t>(i)];
        all.push_back(std::move(w));
        int pos = len - 1;
        while (pos >= 0 && ++idx[static_cast<std::size_t>(pos)] == k) {
          idx[static_cast<std::size_t>(pos)] = 0;
          --pos;
        }
        if (pos < 0) break;
      }
    }
    shuffle_inplace(all, gen);
    all.resize(static_cast<std::size_t>(n));
    return all;
  }

  std::vector<std::string> words;
  std::set<std::string> seen;
  std::int64_t attempts = 0;
  const std::int64_t max_attempts = static_cast<std::int64_t>(n) * 64 + 4096;
  while (static_cast<int>(words.size()) < n) {
    if (++attempts > max_attempts)
      throw ExhaustionError("sample_words: rejection sampling exhausted after " +
                            std::to_string(attempts) + " attempts");
    const int len = uniform_int(gen, len_min, len_max);
    std::string w;
    for (int i = 0; i < len; ++i)
      w += script.alphabet[uniform_u64(gen, static_cast<std::uint64_t>(k))];
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::string render_canonical(const TaskTables& tables, const std::string& script_id,
                             const std::string& word) {
  const ScriptSpec& script = tables.script(script_id);
  const auto& canonical = tables.pivot.canonical.at(script_id);
  std::string out;
  for (int c : word_char_indices(script, word))
    out += tables.pivot.universe[static_cast<std::size_t>(canonical[static_cast<std::size_t>(c)])];
  return out;
}

std::vector<int> parse_pivot(const TaskTables& tables, const std::string& pivot_word) {
  // The universe is prefix-free: when a one-letter variant matches it is the
  // only possible parse at that position, otherwise the two-letter one is.
  std::vector<int> out;
  std::size_t i = 0;
  while (i < pivot_word.size()) {
    auto it1 = tables.pivot.variant_index.find(pivot_word.substr(i, 1));
    if (it1 != tables.pivot.variant_index.end()) {
      out.push_back(it1->second);
      i += 1;
      continue;
    }
    if (i + 2 <= pivot_word.size()) {
      auto it2 = tables.pivot.variant_index.find(pivot_word.substr(i, 2));
      if (it2 != tables.pivot.variant_index.end()) {
        out.push_back(it2->second);
        i += 2;
        continue;
      }
    }
    throw ValueError("parse_pivot: no variant matches at offset " + std::to_string(i) + " of '" +
                     pivot_word + "'");
  }
  return out;
}

std::string render_from_pivot(const TaskTables& tables, const std::string& script_id,
                              const std::string& pivot_word) {
  const ScriptSpec& script = tables.script(script_id);
  const auto& inverse = tables.pivot.inverse.at(script_id);
  std::string out;
  for (int v : parse_pivot(tables, pivot_word))
    out += script.alphabet[static_cast<std::size_t>(inverse[static_cast<std::size_t>(v)])];
  return out;
}

std::vector<PairRecord> make_dataset(
    DatasetFormat format, const TaskTables& tables,
    const std::map<std::string, std::vector<std::string>>& words_per_script) {
  std::vector<PairRecord> out;
  auto add_direction = [&](Direction dir) {
    for (const auto& [script_id, words] : words_per_script) {
      if (!tables.has_script(script_id))
        throw ValueError("make_dataset: unknown script '" + script_id + "'");
      for (const auto& w : words) {
        const std::string p = render_canonical(tables, script_id, w);
        if (dir == Direction::ToPivot)
          out.push_back({script_id, w, kPivotName, p, Direction::ToPivot});
        else
          out.push_back({kPivotName, p, script_id, w, Direction::FromPivot});
      }
    }
  };
  switch (format) {
    case DatasetFormat::UniToPivot:
      add_direction(Direction::ToPivot);
      break;
    case DatasetFormat::UniFromPivot:
      add_direction(Direction::FromPivot);
      break;
    case DatasetFormat::Bi:
      add_direction(Direction::ToPivot);
      add_direction(Direction::FromPivot);
      break;
  }
  return out;
}

ChainedExample chained_ground_truth(const std::string& word, const std::string& src_script,
                                    const std::string& tgt_script, const TaskTables& tables) {
  const ScriptSpec& src = tables.script(src_script);
  const ScriptSpec& tgt = tables.script(tgt_script);
  const auto& src_cells = tables.pivot.cells.at(src_script);
  const auto& tgt_inverse = tables.pivot.inverse.at(tgt_script);

  ChainedExample ex;
  ex.source = word;
  ex.pivot = render_canonical(tables, src_script, word);
  ex.target = render_from_pivot(tables, tgt_script, ex.pivot);

  // Per-character acceptable target sets; allowed_targets is their product.
  std::vector<std::vector<std::string>> options;
  for (int c : word_char_indices(src, word)) {
    std::set<std::string> opts;
    for (int v : src_cells[static_cast<std::size_t>(c)])
      opts.insert(tgt.alphabet[static_cast<std::size_t>(tgt_inverse[static_cast<std::size_t>(v)])]);
    options.emplace_back(opts.begin(), opts.end());
  }
  double size = 1;
  for (const auto& o : options) size *= static_cast<double>(o.size());
  if (size > (1 << 20))
    throw ValueError("chained_ground_truth: variant set too large to enumerate");

  std::vector<std::size_t> idx(options.size(), 0);
  while (true) {
    std::string t;
    for (std::size_t i = 0; i < options.size(); ++i) t += options[i][idx[i]];
    ex.allowed_targets.insert(std::move(t));
    std::size_t pos = options.size();
    while (pos > 0) {
      --pos;
      if (++idx[pos] < options[pos].size()) break;
      idx[pos] = 0;
      if (pos == 0) {
        pos = SIZE_MAX;
        break;
      }
    }
    if (options.empty() || pos == SIZE_MAX) break;
  }
  return ex;
}

Vocab build_task_vocab(const TaskTables& tables) {
  std::vector<std::string> langs{kPivotName};
  for (const auto& s : tables.scripts) langs.push_back(s.id);
  std::vector<std::string> content;
  for (const auto& s : tables.scripts)
    content.insert(content.end(), s.alphabet.begin(), s.alphabet.end());
  content.insert(content.end(), tables.pivot_alphabet.begin(), tables.pivot_alphabet.end());
  return Vocab::build(langs, content);
}

TokenSequence to_sequence(const Vocab& vocab, const std::string& word,
                          const std::string& lang_name) {
  TokenSequence seq;
  seq.ids = vocab.encode_word(word);
  seq.lang = vocab.language_id(lang_name);
  return seq;
}

// ---- corpus ----------------------------------------------------------------

std::vector<std::string> Corpus::script_ids() const {
  std::vector<std::string> out;
  for (const auto& s : tables.scripts) out.push_back(s.id);
  return out;
}

Corpus build_corpus(const CorpusConfig& config) {
  if (config.words_per_script < 2) throw ConfigError("build_corpus: need at least 2 words per script");
  if (config.train_fraction <= 0.0 || config.train_fraction >= 1.0)
    throw ConfigError("build_corpus: train_fraction must be in (0, 1)");

  Corpus corpus;
  corpus.tables = build_tables(config.seed, config.n_scripts, config.alphabet_size,
                               config.ambiguity_rate);
  for (std::size_t s = 0; s < corpus.tables.scripts.size(); ++s) {
    const ScriptSpec& script = corpus.tables.scripts[s];
    std::vector<std::string> words =
        sample_words(config.words_per_script, config.len_min, config.len_max, script,
                     splitmix64(config.seed + 31 * (s + 1)));
    auto gen = seeded_stream(config.seed, 300 + static_cast<std::uint64_t>(s));
    shuffle_inplace(words, gen);
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(words.size())));
    corpus.train_words[script.id] = {words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n_train)};
    corpus.test_words[script.id] = {words.begin() + static_cast<std::ptrdiff_t>(n_train), words.end()};
  }
  return corpus;
}

// ---- text formats ----------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string pairs_to_text(const std::vector<PairRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.src_lang;
    out += '\t';
    out += r.src_word;
    out += '\t';
    out += r.tgt_lang;
    out += '\t';
    out += r.tgt_word;
    out += '\n';
  }
  return out;
}

std::vector<PairRecord> pairs_from_text(const std::string& text) {
  std::vector<PairRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw FormatError("pair record at line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected 4");
    PairRecord r{fields[0], fields[1], fields[2], fields[3],
                 fields[2] == kPivotName ? Direction::ToPivot : Direction::FromPivot};
    out.push_back(std::move(r));
  }
  return out;
}

void write_pairs(const std::string& path, const std::vector<PairRecord>& records) {
  write_file_atomic(path, pairs_to_text(records));
}

std::vector<PairRecord> read_pairs(const std::string& path) {
  return pairs_from_text(read_file(path));
}

std::string allowed_to_text(const std::vector<ChainedExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += ex.source;
    out += '\t';
    bool first = true;
    for (const auto& t : ex.allowed_targets) {
      if (!first) out += '|';
      out += t;
      first = false;
    }
    out += '\n';
  }
  return out;
}

std::map<std::string, std::set<std::string>> allowed_from_text(const std::string& text) {
  std::map<std::string, std::set<std::string>> out;
  std::size_t line_no = 0;
  for (const auto& line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw FormatError("allowed-variant record at line " + std::to_string(line_no) +
                        " has " + std::to_string(fields.size()) + " fields, expected 2");
    std::set<std::string> variants;
    for (const auto& v : split(fields[1], '|'))
      if (!v.empty()) variants.insert(v);
    out[fields[0]] = std::move(variants);
  }
  return out;
}

void write_allowed(const std::string& path, const std::vector<ChainedExample>& examples) {
  write_file_atomic(path, allowed_to_text(examples));
}

std::map<std::string, std::set<std::string>> read_allowed(const std::string& path) {
  return allowed_from_text(read_file(path));
}

}  // namespace pipefold
