#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "settp/corpus.hpp"
#include "settp/error.hpp"

using namespace settp;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("settp_test_" + name);
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SyntheticStyleSpec spec_of(Transform t, std::uint64_t seed = 1) {
  SyntheticStyleSpec s;
  s.name = std::string(to_string(t));
  s.transform = t;
  s.vocab_size = 16;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("vocabulary reserves the four specials first") {
  Vocabulary v({"x", "y", "x"});
  CHECK(v.size() == 6);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.id("y") == 5);
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  CHECK(v.decode({1, 4, 5, 2, 4}) == TokenSeq{"x", "y"});
}

TEST_CASE("token substitution replaces every good with bad") {
  auto spec = spec_of(Transform::token_substitution);
  spec.substitutions = {{"good", "bad"}};
  const auto corpus = generate_synthetic_task(spec, 4);
  REQUIRE(corpus.size() == 4);
  for (const auto& p : corpus.pairs) {
    CHECK(std::count(p.source.begin(), p.source.end(), "good") >= 1);
    CHECK(std::count(p.target.begin(), p.target.end(), "good") == 0);
    REQUIRE(p.source.size() == p.target.size());
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      CHECK(p.target[i] == (p.source[i] == "good" ? std::string("bad") : p.source[i]));
    }
  }
}

TEST_CASE("suffix tagging appends the tag") {
  auto spec = spec_of(Transform::suffix_tagging);
  spec.tag = "<F>";
  const auto corpus = generate_synthetic_task(spec, 1);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus.pairs[0].target.back() == "<F>");
  CHECK(corpus.pairs[0].target.size() == corpus.pairs[0].source.size() + 1);
}

TEST_CASE("generation is a pure function of the spec") {
  const auto spec = spec_of(Transform::word_reversal, 7);
  const auto a = temp_file("rev_a.jsonl"), b = temp_file("rev_b.jsonl");
  save_jsonl(generate_synthetic_task(spec, 100), a);
  save_jsonl(generate_synthetic_task(spec, 100), b);
  CHECK(read_all(a) == read_all(b));
  CHECK(read_all(a).size() > 0);
}

TEST_CASE("invalid vocab size is rejected") {
  auto spec = spec_of(Transform::suffix_tagging);
  spec.vocab_size = 7;
  CHECK_THROWS_AS(generate_synthetic_task(spec, 3), Error);
}

TEST_CASE("oracle accepts every target and rejects every source") {
  for (Transform t : {Transform::uppercase_markers, Transform::token_substitution, Transform::suffix_tagging,
                      Transform::word_reversal, Transform::politeness_particles}) {
    const auto spec = spec_of(t, 11);
    const StyleOracle oracle(spec);
    const auto corpus = generate_synthetic_task(spec, 200);
    for (const auto& p : corpus.pairs) {
      CHECK_MESSAGE(oracle.accepts(p.target), to_string(t));
      CHECK_MESSAGE(!oracle.accepts(p.source), to_string(t));
      CHECK(p.source.size() <= spec.max_seq_len);
      for (const auto& tok : p.target) CHECK(corpus.vocab.contains(tok));
    }
  }
}

TEST_CASE("synthetic topics are lexically disjoint") {
  const auto corpus = generate_synthetic_task(spec_of(Transform::suffix_tagging, 3), 100);
  std::set<int> seen;
  for (const auto& p : corpus.pairs) {
    const auto topic = synthetic_topic(p.source, 16);
    REQUIRE(topic.has_value());
    seen.insert(*topic);
  }
  CHECK(seen.size() == 2);
}

TEST_CASE("load_jsonl reads a single record") {
  const auto path = temp_file("one.jsonl");
  std::ofstream(path) << R"({"source":"a b","target":"b a"})" << "\n";
  const auto data = load_jsonl(path);
  CHECK(data.total() == 1);
  REQUIRE(data.train.size() == 1);
  CHECK(data.train.pairs[0].source == TokenSeq{"a", "b"});
  CHECK(data.train.vocab.size() == 6);
  CHECK(data.train.vocab.id("a") == 4);
}

TEST_CASE("load_jsonl names the line of a bad record") {
  const auto path = temp_file("bad.jsonl");
  std::ofstream(path) << R"({"source":"a","target":"b"})" << "\n"
                      << R"({"source":"c"})" << "\n"
                      << R"({"source":"d","target":"e"})" << "\n";
  try {
    (void)load_jsonl(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  const auto empty = temp_file("empty.jsonl");
  std::ofstream(empty) << "";
  CHECK_THROWS_AS(load_jsonl(empty), Error);
  const auto garbage = temp_file("garbage.jsonl");
  std::ofstream(garbage) << "{not json\n";
  CHECK_THROWS_AS(load_jsonl(garbage), Error);
}

TEST_CASE("missing split fields default to 80/10/10") {
  const auto path = temp_file("ten.jsonl");
  {
    std::ofstream out(path);
    for (int i = 0; i < 10; ++i) out << R"({"source":"s)" << i << R"(","target":"t)" << i << "\"}\n";
  }
  const auto data = load_jsonl(path);
  CHECK(data.train.size() == 8);
  CHECK(data.validation.size() == 1);
  CHECK(data.test.size() == 1);
  CHECK(data.test.pairs[0].source == TokenSeq{"s9"});
}

TEST_CASE("save then load preserves pairs and bytes") {
  const auto corpus = generate_synthetic_task(spec_of(Transform::politeness_particles, 5), 50);
  const auto data = split_corpus(corpus);
  const auto a = temp_file("rt_a.jsonl"), b = temp_file("rt_b.jsonl");
  save_jsonl(data, a);
  const auto loaded = load_jsonl(a);
  CHECK(loaded.train.pairs == data.train.pairs);
  CHECK(loaded.validation.pairs == data.validation.pairs);
  CHECK(loaded.test.pairs == data.test.pairs);
  save_jsonl(loaded, b);
  CHECK(read_all(a) == read_all(b));
}

TEST_CASE("few-shot sampling sizes and determinism") {
  const auto corpus = generate_synthetic_task(spec_of(Transform::suffix_tagging), 100);
  CHECK(sample_few_shot(corpus, 0.05, 3).size() == 5);
  const auto full = sample_few_shot(corpus, 1.0, 9);
  CHECK(full.pairs == corpus.pairs);
  CHECK(sample_few_shot(corpus, 0.1, 4).pairs == sample_few_shot(corpus, 0.1, 4).pairs);
  CHECK_THROWS_AS(sample_few_shot(corpus, 0.001, 1), Error);
  CHECK_THROWS_AS(sample_few_shot(corpus, 0.0, 1), Error);
}

TEST_CASE("few-shot sampler is uniform over k-subsets") {
  // Reference: enumerate all C(6,2) = 15 subsets; every one should be drawn
  // with probability 1/15. Chi-square over 15000 seeds, 14 dof: the 0.999
  // quantile is 36.1.
  const std::size_t n = 6;
  std::map<std::vector<std::size_t>, int> counts;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) counts[{i, j}] = 0;
  REQUIRE(counts.size() == 15);
  const int draws = 15000;
  int differs_from_previous = 0;
  std::vector<std::size_t> prev;
  for (int s = 0; s < draws; ++s) {
    const auto idx = few_shot_indices(n, 2.0 / 6.0, static_cast<std::uint64_t>(s));
    REQUIRE(counts.count(idx) == 1);
    ++counts[idx];
    if (!prev.empty() && idx != prev) ++differs_from_previous;
    prev = idx;
  }
  const double expected = draws / 15.0;
  double chi2 = 0.0;
  for (const auto& [subset, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 36.1);
  // Two independent uniform draws coincide with probability 1/15.
  const double rate = static_cast<double>(differs_from_previous) / (draws - 1);
  CHECK(rate == doctest::Approx(14.0 / 15.0).epsilon(0.02));
}
