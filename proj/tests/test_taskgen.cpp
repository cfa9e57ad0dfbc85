#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "pipefold/errors.hpp"
#include "pipefold/fsio.hpp"
#include "pipefold/taskgen.hpp"
#include "pipefold/utf8.hpp"

using namespace pipefold;

TEST_CASE("build_tables validates its inputs") {
  CHECK_THROWS_AS(build_tables(1, 1, 16, 0.3), ConfigError);
  CHECK_THROWS_AS(build_tables(1, 4, 4, 0.3), ConfigError);
  CHECK_THROWS_AS(build_tables(1, 4, 16, 1.5), ConfigError);
}

TEST_CASE("tables are deterministic in the seed") {
  TaskTables a = build_tables(9, 3, 16, 0.4);
  TaskTables b = build_tables(9, 3, 16, 0.4);
  CHECK(a.pivot.universe == b.pivot.universe);
  CHECK(a.pivot.cells == b.pivot.cells);
  CHECK(a.pivot.canonical == b.pivot.canonical);

  TaskTables c = build_tables(10, 3, 16, 0.4);
  CHECK(a.pivot.universe != c.pivot.universe);
}

TEST_CASE("script alphabets and the pivot are disjoint") {
  TaskTables t = build_tables(3, 4, 24, 0.3);
  std::set<std::string> seen;
  for (const auto& s : t.scripts)
    for (const auto& ch : s.alphabet) CHECK(seen.insert(ch).second);
  for (const auto& ch : t.pivot_alphabet) CHECK(seen.insert(ch).second);
}

TEST_CASE("variant universe is prefix-free") {
  for (std::uint64_t seed : {1, 2, 3}) {
    TaskTables t = build_tables(seed, 4, 32, 0.5);
    const auto& u = t.pivot.universe;
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = 0; j < u.size(); ++j) {
        if (i == j) continue;
        CHECK(u[j].rfind(u[i], 0) != 0);  // u[i] is not a prefix of u[j]
      }
  }
}

TEST_CASE("ambiguity rate controls multi-variant characters") {
  // rate 0: every character has exactly one variant in every script
  TaskTables zero = build_tables(5, 2, 16, 0.0);
  for (const auto& [script, cells] : zero.pivot.cells)
    for (const auto& cell : cells) CHECK(cell.size() == 1);

  // K = 32: observed fraction within 0.1 of the requested rate
  TaskTables t = build_tables(5, 2, 32, 0.3);
  for (const auto& [script, cells] : t.pivot.cells) {
    int multi = 0;
    for (const auto& cell : cells) multi += cell.size() >= 2 ? 1 : 0;
    CHECK(std::abs(multi / 32.0 - 0.3) <= 0.1);
  }
}

TEST_CASE("every script partitions the whole universe") {
  TaskTables t = build_tables(21, 4, 24, 0.3);
  for (const auto& s : t.scripts) {
    const auto& cells = t.pivot.cells.at(s.id);
    CHECK(static_cast<int>(cells.size()) == s.size());
    std::set<int> used;
    for (const auto& cell : cells) {
      CHECK(!cell.empty());
      for (int v : cell) CHECK(used.insert(v).second);
    }
    CHECK(used.size() == t.pivot.universe.size());
    // inverse really inverts
    const auto& inverse = t.pivot.inverse.at(s.id);
    for (std::size_t c = 0; c < cells.size(); ++c)
      for (int v : cells[c]) CHECK(inverse[static_cast<std::size_t>(v)] == static_cast<int>(c));
  }
}

TEST_CASE("sample_words") {
  TaskTables t = build_tables(3, 2, 8, 0.0);
  const ScriptSpec& s = t.scripts[0];

  CHECK(sample_words(0, 1, 3, s, 1).empty());

  auto words = sample_words(200, 2, 5, s, 1);
  CHECK(words.size() == 200);
  std::set<std::string> distinct(words.begin(), words.end());
  CHECK(distinct.size() == 200);
  for (const auto& w : words) {
    const auto n = utf8_chars(w).size();
    CHECK(n >= 2);
    CHECK(n <= 5);
  }
  CHECK(sample_words(200, 2, 5, s, 1) == words);

  // only 8 one-character words exist
  CHECK(sample_words(8, 1, 1, s, 7).size() == 8);
  CHECK_THROWS_AS(sample_words(9, 1, 1, s, 7), ExhaustionError);
  CHECK_THROWS_AS(sample_words(3, 0, 1, s, 7), ValueError);
}

TEST_CASE("render and parse round trips") {
  TaskTables t = build_tables(11, 3, 16, 0.4);
  const ScriptSpec& s0 = t.scripts[0];
  auto words = sample_words(100, 1, 8, s0, 2);
  for (const auto& w : words) {
    const std::string p = render_canonical(t, "s0", w);
    // the inverse map takes every generated rendering back to its source
    CHECK(render_from_pivot(t, "s0", p) == w);
  }
  CHECK_THROWS_AS(render_canonical(t, "s0", "xyz"), AlphabetError);
  CHECK_THROWS_AS(parse_pivot(t, "@@"), ValueError);
}

TEST_CASE("make_dataset formats") {
  TaskTables t = build_tables(13, 2, 12, 0.5);
  std::map<std::string, std::vector<std::string>> words;
  words["s0"] = sample_words(40, 2, 5, t.scripts[0], 3);
  words["s1"] = sample_words(40, 2, 5, t.scripts[1], 4);

  auto to = make_dataset(DatasetFormat::UniToPivot, t, words);
  auto from = make_dataset(DatasetFormat::UniFromPivot, t, words);
  auto bi = make_dataset(DatasetFormat::Bi, t, words);

  CHECK(bi.size() == to.size() + from.size());
  // BI is exactly the concatenation of the two uni sets
  for (std::size_t i = 0; i < to.size(); ++i) CHECK(bi[i] == to[i]);
  for (std::size_t i = 0; i < from.size(); ++i) CHECK(bi[to.size() + i] == from[i]);

  for (const auto& r : to) {
    CHECK(r.tgt_lang == kPivotName);
    CHECK(r.direction == Direction::ToPivot);
    CHECK(render_from_pivot(t, r.src_lang, r.tgt_word) == r.src_word);
  }
  for (const auto& r : from) {
    CHECK(r.src_lang == kPivotName);
    CHECK(r.direction == Direction::FromPivot);
  }

  // repeated generation is deterministic
  CHECK(make_dataset(DatasetFormat::Bi, t, words) == bi);
}

TEST_CASE("chained ground truth") {
  TaskTables t = build_tables(17, 3, 16, 0.5);
  const ScriptSpec& s0 = t.scripts[0];
  auto words = sample_words(30, 2, 6, s0, 5);

  for (const auto& w : words) {
    ChainedExample ex = chained_ground_truth(w, "s0", "s1", t);
    CHECK(ex.allowed_targets.count(ex.target) == 1);
    CHECK(ex.pivot == render_canonical(t, "s0", w));

    // brute-force pivot variant count: product over per-character cells
    const auto chars = utf8_chars(w);
    const auto& cells = t.pivot.cells.at("s0");
    std::set<std::string> variants{""};
    std::size_t expected = 1;
    for (const auto& ch : chars) {
      int idx = -1;
      for (std::size_t i = 0; i < s0.alphabet.size(); ++i)
        if (s0.alphabet[i] == ch) idx = static_cast<int>(i);
      REQUIRE(idx >= 0);
      expected *= cells[static_cast<std::size_t>(idx)].size();
      std::set<std::string> next;
      for (const auto& prefix : variants)
        for (int v : cells[static_cast<std::size_t>(idx)])
          next.insert(prefix + t.pivot.universe[static_cast<std::size_t>(v)]);
      variants = std::move(next);
    }
    CHECK(variants.size() == expected);  // prefix-freeness keeps renderings distinct

    // every rendering maps to an allowed target
    for (const auto& p : variants) CHECK(ex.allowed_targets.count(render_from_pivot(t, "s1", p)));

    // mirror case reconstructs the word
    ChainedExample mirror = chained_ground_truth(w, "s0", "s0", t);
    CHECK(mirror.allowed_targets.count(w) == 1);
  }

  // rate 0 means a unique allowed target
  TaskTables zero = build_tables(17, 2, 16, 0.0);
  for (const auto& w : sample_words(20, 2, 6, zero.scripts[0], 6)) {
    ChainedExample ex = chained_ground_truth(w, "s0", "s1", zero);
    CHECK(ex.allowed_targets.size() == 1);
  }

  CHECK_THROWS_AS(chained_ground_truth("abc", "s0", "s1", t), AlphabetError);
}

TEST_CASE("corpus split") {
  CorpusConfig cfg;
  cfg.seed = 77;
  cfg.n_scripts = 2;
  cfg.alphabet_size = 12;
  cfg.words_per_script = 300;
  cfg.len_min = 2;
  cfg.len_max = 6;
  Corpus corpus = build_corpus(cfg);

  for (const auto& id : corpus.script_ids()) {
    const auto& train = corpus.train_words.at(id);
    const auto& test = corpus.test_words.at(id);
    CHECK(train.size() == 270);
    CHECK(test.size() == 30);
    std::set<std::string> train_set(train.begin(), train.end());
    for (const auto& w : test) CHECK(train_set.count(w) == 0);
  }

  Corpus again = build_corpus(cfg);
  CHECK(again.train_words == corpus.train_words);
  CHECK(again.test_words == corpus.test_words);
}

TEST_CASE("vocab built from tables") {
  TaskTables t = build_tables(19, 2, 10, 0.2);
  Vocab v = build_task_vocab(t);
  CHECK(v.n_languages() == 3);  // pivot + 2 scripts
  CHECK(v.size() == 3 + 3 + 2 * 10 + 26);
  CHECK_NOTHROW(v.language_id(kPivotName));
  TokenSequence s = to_sequence(v, t.scripts[0].alphabet[0], "s0");
  CHECK(s.length() == 1);
  CHECK(v.is_language(s.lang));
}

TEST_CASE("pair and allowed file round trips") {
  TaskTables t = build_tables(23, 2, 12, 0.4);
  std::map<std::string, std::vector<std::string>> words;
  words["s0"] = sample_words(25, 2, 5, t.scripts[0], 8);
  words["s1"] = sample_words(25, 2, 5, t.scripts[1], 9);
  auto records = make_dataset(DatasetFormat::Bi, t, words);

  const std::string dir = std::filesystem::temp_directory_path() / "pipefold_taskgen_test";
  std::filesystem::create_directories(dir);
  const std::string pairs_path = dir + "/pairs.tsv";
  write_pairs(pairs_path, records);
  CHECK(read_pairs(pairs_path) == records);
  // byte-identical re-dump
  write_pairs(dir + "/pairs2.tsv", read_pairs(pairs_path));
  CHECK(read_file(pairs_path) == read_file(dir + "/pairs2.tsv"));

  std::vector<ChainedExample> examples;
  for (const auto& w : words["s0"]) examples.push_back(chained_ground_truth(w, "s0", "s1", t));
  const std::string allowed_path = dir + "/allowed.tsv";
  write_allowed(allowed_path, examples);
  auto loaded = read_allowed(allowed_path);
  CHECK(loaded.size() == examples.size());
  for (const auto& ex : examples) CHECK(loaded.at(ex.source) == ex.allowed_targets);

  CHECK_THROWS_AS(read_pairs(dir + "/missing.tsv"), IoError);
  CHECK_THROWS_AS(pairs_from_text("a\tb\tc\n"), FormatError);
  std::filesystem::remove_all(dir);
}
