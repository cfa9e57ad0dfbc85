#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "pipefold/errors.hpp"
#include "pipefold/metrics.hpp"
#include "pipefold/rng.hpp"
#include "support/oracles.hpp"

using namespace pipefold;
using pipefold::test::brute_force_edits;

TEST_CASE("edit counts on known pairs") {
  EditCounts id = edit_counts(std::string("abc"), std::string("abc"));
  CHECK(id == EditCounts{0, 0, 0, 3});

  // the classic phonetic pair: two errors, two correct characters
  EditCounts nk = edit_counts(std::string("no"), std::string("know"));
  CHECK(nk.errors() == 2);
  CHECK(nk.correct == 2);

  EditCounts empty_hyp = edit_counts(std::string("ab"), std::string(""));
  CHECK(empty_hyp == EditCounts{0, 2, 0, 0});
  EditCounts empty_ref = edit_counts(std::string(""), std::string("ab"));
  CHECK(empty_ref == EditCounts{0, 0, 2, 0});
}

TEST_CASE("edit count invariants against the brute-force oracle") {
  // exhaustive over all pairs up to length 3 on a 5-symbol alphabet
  std::vector<std::vector<int>> strings{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= 3; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier)
      for (int c = 0; c < 5; ++c) {
        auto t = s;
        t.push_back(c);
        next.push_back(t);
      }
    strings.insert(strings.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  REQUIRE(strings.size() == 1 + 5 + 25 + 125);
  for (const auto& ref : strings) {
    for (const auto& hyp : strings) {
      const EditCounts c = edit_counts(ref, hyp);
      CHECK(c.errors() == brute_force_edits(ref, hyp));
      CHECK(c.substitutions + c.deletions + c.correct == static_cast<int>(ref.size()));
      CHECK(c.substitutions + c.insertions + c.correct == static_cast<int>(hyp.size()));
    }
  }

  // random pairs up to length 6
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<int> ref(uniform_u64(gen, 7)), hyp(uniform_u64(gen, 7));
    for (auto& c : ref) c = static_cast<int>(uniform_u64(gen, 5));
    for (auto& c : hyp) c = static_cast<int>(uniform_u64(gen, 5));
    const EditCounts c = edit_counts(ref, hyp);
    CHECK(c.errors() == brute_force_edits(ref, hyp));
    CHECK(c.substitutions + c.deletions + c.correct == static_cast<int>(ref.size()));
    CHECK(c.substitutions + c.insertions + c.correct == static_cast<int>(hyp.size()));
  }
}

TEST_CASE("cer") {
  CHECK(cer(std::string("word"), std::string("word")) == 0.0);
  CHECK(cer(std::string("no"), std::string("know")) == 0.5);
  CHECK(cer(std::string("abc"), std::string("abd")) == doctest::Approx(1.0 / 3.0));
  CHECK(cer(std::string("ab"), std::string("")) == 1.0);
  CHECK_THROWS_AS(cer(std::string(""), std::string("")), UndefinedMetricError);

  // symmetry of the formula
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> a(1 + uniform_u64(gen, 6)), b(uniform_u64(gen, 7));
    for (auto& c : a) c = static_cast<int>(uniform_u64(gen, 4));
    for (auto& c : b) c = static_cast<int>(uniform_u64(gen, 4));
    if (a.empty() && b.empty()) continue;
    CHECK(cer(a, b) == doctest::Approx(cer(b, a)).epsilon(1e-12));
  }
}

namespace {

ChainedExample example(const std::string& src, const std::string& canonical,
                       std::set<std::string> allowed) {
  ChainedExample ex;
  ex.source = src;
  ex.target = canonical;
  ex.allowed_targets = std::move(allowed);
  return ex;
}

}  // namespace

TEST_CASE("phonetic accuracy") {
  std::vector<ChainedExample> examples{
      example("aa", "xy", {"xy", "xz"}),
      example("bb", "pq", {"pq"}),
  };

  CHECK(phonetic_accuracy({"xy", "pq"}, examples) == 1.0);
  // a non-canonical allowed variant still counts
  CHECK(phonetic_accuracy({"xz", "pq"}, examples) == 1.0);
  // empty prediction on a nonempty target is wrong
  CHECK(phonetic_accuracy({"", "pq"}, examples) == 0.5);
  CHECK_THROWS_AS(phonetic_accuracy({"xy"}, examples), InputError);

  // phonetic accuracy never falls below exact match
  std::vector<std::string> preds{"xz", "nope"};
  double exact = 0;
  for (std::size_t i = 0; i < examples.size(); ++i)
    exact += preds[i] == examples[i].target ? 1.0 : 0.0;
  exact /= static_cast<double>(examples.size());
  CHECK(phonetic_accuracy(preds, examples) >= exact);
}

TEST_CASE("emergent partition") {
  std::vector<ChainedExample> examples{
      example("w1", "aa", {"aa", "ab"}),
      example("w2", "bb", {"bb"}),
      example("w3", "cc", {"cc", "cd"}),
      example("w4", "dd", {"dd"}),
  };

  // identical predictions leave the one-sided sets empty
  std::vector<std::string> same{"aa", "bb", "zz", "dd"};
  WinPartition p0 = emergent_partition(same, same, examples);
  CHECK(p0.teacher_only.empty());
  CHECK(p0.student_only.empty());
  CHECK(p0.total() == examples.size());

  // constructed emergent win: the teacher picks a wrong variant, the student
  // a correct one
  std::vector<std::string> teacher{"aa", "bx", "ce", "dd"};
  std::vector<std::string> student{"ab", "bb", "cd", "dx"};
  WinPartition p = emergent_partition(teacher, student, examples);
  CHECK(p.both_correct == std::vector<std::size_t>{0});
  CHECK(p.teacher_only == std::vector<std::size_t>{3});
  CHECK(p.student_only == std::vector<std::size_t>{1, 2});
  CHECK(p.both_wrong.empty());
  CHECK(p.total() == examples.size());

  CHECK_THROWS_AS(emergent_partition({"a"}, student, examples), InputError);
}

namespace {

struct BenchFixture {
  Vocab vocab = Vocab::build({"pivot", "s0", "s1"}, {"a", "b", "c", "d"});
  ModelConfig cfg;
  EncoderParams enc;
  DecoderParams dec;

  BenchFixture() {
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ff_dim = 24;
    cfg.l_max = 12;
    cfg.vocab_size = vocab.size();
    cfg.n_languages = vocab.n_languages();
    cfg.dropout = 0.f;
    auto [e, d] = init_model(cfg, 41);
    enc = std::move(e);
    dec = std::move(d);
    // force generation of a fixed content token so pipeline runs never
    // produce an empty intermediate
    std::fill(dec.out_w.mutable_data().begin(), dec.out_w.mutable_data().end(), 0.f);
    std::fill(dec.out_b.mutable_data().begin(), dec.out_b.mutable_data().end(), 0.f);
    dec.out_b.mutable_data()[static_cast<std::size_t>(vocab.id("b"))] = 10.f;
  }

  TokenSequence word(const std::string& w) {
    TokenSequence s;
    s.ids = vocab.encode_word(w);
    s.lang = vocab.language_id("s0");
    return s;
  }
};

}  // namespace

TEST_CASE("latency bench and pass counts") {
  BenchFixture f;
  PipelineSpec pipeline = mirror_pipeline(f.enc, f.dec, f.vocab.language_id(kPivotName),
                                          f.vocab.language_id("s1"));
  StudentModel student = assemble_student(clone(f.enc), clone(f.dec));

  LatencyInputs inputs;
  const int tgt = f.vocab.language_id("s1");
  inputs.by_length[2] = {{f.word("ab"), tgt}, {f.word("cd"), tgt}};
  inputs.by_length[4] = {{f.word("abcd"), tgt}, {f.word("ddca"), tgt}};

  CHECK_THROWS_AS(latency_bench(pipeline, student, inputs, 5), ValueError);

  LatencyReport report = latency_bench(pipeline, student, inputs, 12);
  CHECK(report.buckets.size() == 2);
  for (const auto& b : report.buckets) {
    CHECK(b.pipeline_ms > 0.0);
    CHECK(b.student_ms > 0.0);
    CHECK(b.student_ms < b.pipeline_ms);
  }
  CHECK(report.speedup > 1.0);

  PassCheck passes = verify_pass_counts(pipeline, student, f.word("abcd"), tgt);
  CHECK(passes.pipeline_passes == 4);
  CHECK(passes.student_passes == 2);

  PipelineTrace trace;
  (void)run_pipeline(pipeline, f.word("abcd"), tgt, &trace);
  CHECK(trace.passes_before_v2 == 3);
}

TEST_CASE("report json schema") {
  EvalReport report;
  PairEval pe;
  pe.src = "s0";
  pe.tgt = "s1";
  pe.count = 10;
  pe.teacher_phonetic = 0.9;
  pe.student_phonetic = 0.88;
  pe.teacher_cer = 0.05;
  pe.student_cer = 0.06;
  pe.agreement = 0.95;
  report.pairs.push_back(pe);
  report.similarity.per_source["s0"] = {0.97, 0.96};
  report.similarity.overall_train = 0.97;
  report.similarity.overall_test = 0.96;
  report.similarity.train_test_gap = 0.01;
  report.passes = {4, 2};
  report.wins.both_correct = 9;
  report.wins.student_only = 1;
  report.wins.student_only_examples.push_back({"s0", "s1", "ab", "xx", "xy"});

  Provenance prov{"t-digest", "s-digest", 7, "2000-01-01T00:00:00Z"};
  const std::string text = metrics_report_json(report, prov);
  auto j = nlohmann::json::parse(text);
  CHECK(j.contains("pairs"));
  CHECK(j.contains("similarity"));
  CHECK(j.contains("latency"));
  CHECK(j.contains("wins"));
  CHECK(j["pairs"][0]["agreement"] == 0.95);
  CHECK(j["latency"]["passes_per_word"]["pipeline"] == 4);
  CHECK(j["wins"]["student_only_examples"][0]["word"] == "ab");
  CHECK(j["provenance"]["dataset_seed"] == 7);
}
