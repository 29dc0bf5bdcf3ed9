#include <doctest.h>

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "settp/inference.hpp"
#include "test_helpers.hpp"

using namespace settp;
using namespace testing_support;

namespace {

InstanceEntry make_entry(std::vector<double> centroid, std::size_t k, std::uint64_t seed) {
  InstanceEntry e;
  e.prompt = random_prompt(2, 8, seed);
  e.prompt.prompt_id = "t/ins/" + std::to_string(k);
  e.centroid.values = std::move(centroid);
  e.cluster_index = k;
  return e;
}

StyleCorpus corpus_of(const std::vector<TokenSeq>& sources) {
  StyleCorpus c;
  c.task_id = "t";
  c.vocab = tiny_vocab();
  for (const auto& s : sources) c.pairs.push_back({s, s});
  return c;
}

BeamOptions beam() {
  BeamOptions b;
  b.beam_width = 3;
  b.max_len = 4;
  return b;
}

void check_same(const InferenceResult& r, const DecodeResult& d) {
  CHECK(r.output == d.tokens);
  CHECK(r.logprob == d.logprob);
  CHECK(r.finished == d.finished);
}

}  // namespace

TEST_CASE("single-entry pool decodes with that entry's prompt") {
  const Backbone model(tiny_vocab(), tiny_config(2));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  const auto e = make_entry(std::vector<double>(8, 0.0), 0, 5);
  pool.add("t", e);
  InferenceOptions opt;
  opt.beam = beam();
  const TokenSeq src{"a", "c"};
  const auto r = tunable_infer(model, pool, "t", src, opt);
  check_same(r, beam_decode(model, &e.prompt, src, opt.beam));
  CHECK(r.prompt_id == "t/ins/0");
  CHECK(r.source == src);
}

TEST_CASE("inference equals encode, nearest, decode composed by hand") {
  const Backbone model(tiny_vocab(), tiny_config(3));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  pool.add("t", make_entry(std::vector<double>(8, 0.0), 0, 6));
  pool.add("t", make_entry(std::vector<double>(8, 50.0), 1, 7));
  pool.add("t", make_entry(model.encode_content({"d", "d"}).values, 2, 8));
  InferenceOptions opt;
  opt.beam = beam();
  for (const TokenSeq& src : {TokenSeq{"a"}, TokenSeq{"d", "d"}, TokenSeq{"b", "c", "a"}}) {
    const ContentVector q = model.encode_content(src);
    const InstanceEntry& chosen = nearest_instance(pool, q, "t");
    CHECK(chosen.cluster_index != 1);
    const auto r = tunable_infer(model, pool, "t", src, opt);
    CHECK(r.prompt_id == chosen.prompt.prompt_id);
    check_same(r, beam_decode(model, &chosen.prompt, src, opt.beam));
    const auto again = tunable_infer(model, pool, "t", src, opt);
    CHECK(again.output == r.output);
    CHECK(again.prompt_id == r.prompt_id);
  }
  CHECK(tunable_infer(model, pool, "t", {"d", "d"}, opt).prompt_id == "t/ins/2");
}

TEST_CASE("batch inference is the ordered map of single calls") {
  const Backbone model(tiny_vocab(), tiny_config(4));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  for (std::size_t k = 0; k < 4; ++k) pool.add("t", make_entry(std::vector<double>(8, static_cast<double>(k)), k, 10 + k));
  const auto corpus = corpus_of({{"a"}, {"b", "c"}, {"d", "a", "b"}, {"c"}, {"a", "a"}, {"b"}});
  for (bool random : {false, true}) {
    InferenceOptions opt;
    opt.beam = beam();
    opt.random_prompt = random;
    opt.seed = 17;
    const auto batch = batch_infer(model, pool, "t", corpus, opt);
    REQUIRE(batch.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto single = tunable_infer(model, pool, "t", corpus.pairs[i].source, opt, i);
      CHECK(batch[i].source == corpus.pairs[i].source);
      CHECK(batch[i].output == single.output);
      CHECK(batch[i].prompt_id == single.prompt_id);
      CHECK(batch[i].logprob == single.logprob);
    }
  }
  CHECK(batch_infer(model, pool, "t", corpus_of({})).empty());
}

TEST_CASE("random prompt choice is seeded and covers the pool") {
  const Backbone model(tiny_vocab(), tiny_config(4));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  for (std::size_t k = 0; k < 3; ++k) pool.add("t", make_entry(std::vector<double>(8, 0.0), k, 20 + k));
  InferenceOptions opt;
  opt.beam = beam();
  opt.random_prompt = true;
  opt.seed = 3;
  std::set<std::string> used;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto a = tunable_infer(model, pool, "t", {"a"}, opt, i);
    const auto b = tunable_infer(model, pool, "t", {"a"}, opt, i);
    CHECK(a.prompt_id == b.prompt_id);
    used.insert(a.prompt_id);
  }
  CHECK(used.size() == 3);
  // Without the flag every tie resolves to cluster 0.
  opt.random_prompt = false;
  CHECK(tunable_infer(model, pool, "t", {"a"}, opt).prompt_id == "t/ins/0");
}

TEST_CASE("joint conditioning decodes with the stacked prefix") {
  const Backbone model(tiny_vocab(), tiny_config(5));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  const auto e = make_entry(std::vector<double>(8, 0.0), 0, 30);
  pool.add("t", e);
  const auto style = random_prompt(3, 8, 31);
  InferenceOptions opt;
  opt.beam = beam();
  opt.style_prefix = &style;
  const auto r = tunable_infer(model, pool, "t", {"b", "d"}, opt);
  const auto joint = concat_prompts(style, e.prompt, "joint");
  check_same(r, beam_decode(model, &joint, {"b", "d"}, opt.beam));
}

TEST_CASE("cross-task search and per-item errors") {
  const Backbone model(tiny_vocab(), tiny_config(6));
  InstancePromptPool pool(PoolDims{2, 8, 8});
  pool.add("t", make_entry(std::vector<double>(8, 100.0), 0, 40));
  auto other = make_entry(model.encode_content({"c"}).values, 0, 41);
  other.prompt.prompt_id = "u/ins/0";
  pool.add("u", other);
  InferenceOptions opt;
  opt.beam = beam();
  CHECK(tunable_infer(model, pool, "t", {"c"}, opt).prompt_id == "t/ins/0");
  opt.all_tasks = true;
  CHECK(tunable_infer(model, pool, "t", {"c"}, opt).prompt_id == "u/ins/0");

  opt.all_tasks = false;
  const auto results = batch_infer(model, pool, "missing", corpus_of({{"a"}, {"b"}}), opt);
  REQUIRE(results.size() == 2);
  for (const auto& r : results) CHECK_FALSE(r.error.empty());

  const auto path = scratch_path("infer.jsonl");
  auto mixed = batch_infer(model, pool, "t", corpus_of({{"a"}}), opt);
  mixed.push_back(results[0]);
  write_inference_jsonl(mixed, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  auto j = nlohmann::json::parse(line);
  CHECK(j.at("source") == "a");
  CHECK(j.at("prompt_id") == "t/ins/0");
  CHECK(j.contains("output"));
  CHECK(j.contains("logprob"));
  std::getline(in, line);
  j = nlohmann::json::parse(line);
  CHECK(j.contains("error"));
  CHECK_FALSE(j.contains("output"));
}
