#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "settp/backbone.hpp"
#include "settp/error.hpp"
#include "test_helpers.hpp"

using namespace settp;
using namespace testing_support;

namespace {

const StyledPair kPair{{"a", "b"}, {"c", "d"}};

}  // namespace

TEST_CASE("empty prompt is the same as no prompt") {
  const Backbone model(tiny_vocab(), tiny_config());
  const SoftPrompt empty{Matrix(0, 8), "empty"};
  CHECK(model.forward_logprob(&empty, kPair) == model.forward_logprob(nullptr, kPair));
}

TEST_CASE("log-likelihood is never positive") {
  const Backbone model(tiny_vocab(), tiny_config(3));
  const auto prompt = random_prompt(3, 8, 4);
  for (const auto& pair : {kPair, StyledPair{{"a"}, {"a"}}, StyledPair{{"d", "c", "b", "a"}, {"b"}}}) {
    CHECK(model.forward_logprob(nullptr, pair) <= 0.0);
    CHECK(model.forward_logprob(&prompt, pair) <= 0.0);
  }
}

TEST_CASE("forward matches the step-by-step reference on fixed weights") {
  const Backbone model(tiny_vocab(), tiny_config(5));
  const auto prompt = random_prompt(2, 8, 6);
  CHECK(model.forward_logprob(nullptr, kPair) == doctest::Approx(oracle::logprob(model, nullptr, kPair)).epsilon(1e-10));
  CHECK(model.forward_logprob(&prompt, kPair) == doctest::Approx(oracle::logprob(model, &prompt, kPair)).epsilon(1e-10));
}

TEST_CASE("prompt width must equal the embedding dimension") {
  const Backbone model(tiny_vocab(), tiny_config());
  const auto wrong = random_prompt(2, 4, 1);
  CHECK_THROWS_AS(model.forward_logprob(&wrong, kPair), Error);
}

TEST_CASE("prefix length law: memory has m + t_x rows") {
  const Backbone model(tiny_vocab(), tiny_config());
  const auto prompt = random_prompt(5, 8, 2);
  CHECK(model.encoder_states(&prompt, {"a", "b", "c"}).rows() == 8);
  CHECK(model.encoder_states(nullptr, {"a", "b", "c"}).rows() == 3);
}

TEST_CASE("next-token distributions are normalized") {
  const Backbone model(tiny_vocab(), tiny_config(9));
  const auto prompt = random_prompt(3, 8, 10);
  const Matrix memory = model.encode_ids(&prompt, model.vocab().encode({"a", "c"}));
  for (const std::vector<int>& prefix : {std::vector<int>{1}, std::vector<int>{1, 4, 5}}) {
    double total = 0.0;
    for (double lp : model.next_token_logprobs(memory, prefix)) total += std::exp(lp);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("prompt gradient agrees with central finite differences") {
  const Backbone model(tiny_vocab(), tiny_config(11));
  auto prompt = random_prompt(3, 8, 12);
  const std::vector<StyledPair> batch{kPair, {{"d", "a"}, {"b", "b", "c"}}};
  const auto analytic = model.gradients(&prompt, batch, true, false);
  const Matrix fd = oracle::central_difference(
      prompt.matrix, [&] { return oracle::mean_nll(model, &prompt, batch); }, 1e-4);
  CHECK(oracle::max_relative_error(analytic.prompt, fd) < 1e-3);
  CHECK(analytic.mean_nll == doctest::Approx(oracle::mean_nll(model, &prompt, batch)).epsilon(1e-10));
}

TEST_CASE("model gradients agree with central finite differences") {
  Backbone model(tiny_vocab(), tiny_config(13));
  const auto prompt = random_prompt(2, 8, 14);
  const std::vector<StyledPair> batch{kPair};
  const auto analytic = model.gradients(&prompt, batch, false, true);
  for (const char* name : {"tok_emb", "enc.0.attn.wq", "dec.0.cross.wv", "dec.0.ffn.b1", "enc.ln.g", "out.b"}) {
    std::size_t idx = 0;
    while (model.parameter_names()[idx] != name) ++idx;
    Matrix& p = model.parameters()[idx];
    const Matrix fd = oracle::central_difference(p, [&] { return oracle::mean_nll(model, &prompt, batch); }, 1e-5);
    CHECK_MESSAGE(oracle::max_relative_error(analytic.model[idx], fd) < 1e-3, name);
  }
}

TEST_CASE("prompt-only steps leave the model bit-identical") {
  Backbone model(tiny_vocab(), tiny_config());
  auto prompt = random_prompt(3, 8, 1);
  const auto before_model = model.digest();
  const auto before_prompt = prompt.matrix;
  train_step(model, &prompt, std::vector<StyledPair>{kPair}, 0.1, UpdateSet::prompt_only);
  CHECK(model.digest() == before_model);
  CHECK_FALSE(prompt.matrix == before_prompt);
}

TEST_CASE("model-only steps leave the prompt untouched") {
  Backbone model(tiny_vocab(), tiny_config());
  auto prompt = random_prompt(3, 8, 1);
  const auto before_model = model.digest();
  const auto before_prompt = prompt.matrix;
  train_step(model, &prompt, std::vector<StyledPair>{kPair}, 0.1, UpdateSet::model_only);
  CHECK(prompt.matrix == before_prompt);
  CHECK(model.digest() != before_model);
}

TEST_CASE("frozen mask wins over the update set") {
  Backbone model(tiny_vocab(), tiny_config());
  model.set_trainable(false);
  const auto before = model.digest();
  train_step(model, nullptr, std::vector<StyledPair>{kPair}, 0.5, UpdateSet::both);
  CHECK(model.digest() == before);
}

TEST_CASE("zero learning rate changes nothing and reports the forward NLL") {
  Backbone model(tiny_vocab(), tiny_config());
  auto prompt = random_prompt(3, 8, 1);
  const auto before_model = model.digest();
  const auto before_prompt = prompt.matrix;
  const double nll = train_step(model, &prompt, std::vector<StyledPair>{kPair}, 0.0, UpdateSet::both);
  CHECK(model.digest() == before_model);
  CHECK(prompt.matrix == before_prompt);
  CHECK(nll == doctest::Approx(-model.forward_logprob(&prompt, kPair)).epsilon(1e-12));
}

TEST_CASE("non-finite loss names the batch index") {
  Backbone model(tiny_vocab(), tiny_config());
  model.parameter("out.b")(0, 4) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(model, nullptr, std::vector<StyledPair>{kPair}, 0.1, UpdateSet::model_only);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("batch index 0") != std::string::npos);
  }
  CHECK_THROWS_AS(train_step(model, nullptr, std::vector<StyledPair>{}, 0.1, UpdateSet::both), Error);
}

TEST_CASE("a few steps of prompt tuning reduce the loss") {
  Backbone model(tiny_vocab(), tiny_config(21));
  auto prompt = random_prompt(4, 8, 22, 0.02);
  const std::vector<StyledPair> batch{kPair, {{"b", "a"}, {"d", "c"}}};
  const double first = train_step(model, &prompt, batch, 0.5, UpdateSet::prompt_only);
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_step(model, &prompt, batch, 0.5, UpdateSet::prompt_only);
  CHECK(last < first);
}

TEST_CASE("beam width 1 is greedy decoding") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Backbone model(tiny_vocab(), tiny_config(seed));
    const auto prompt = random_prompt(2, 8, seed + 100);
    const auto beam = beam_decode(model, &prompt, {"a", "b"}, {.beam_width = 1, .max_len = 6});
    const auto greedy = greedy_decode(model, &prompt, {"a", "b"}, 6);
    CHECK(beam.ids == greedy.ids);
    CHECK(beam.finished == greedy.finished);
  }
}

TEST_CASE("beam search equals the exhaustive width-limited frontier") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Backbone model(tiny_vocab(), tiny_config(seed));
    const auto prompt = random_prompt(2, 8, seed + 50);
    for (std::size_t width : {1u, 2u, 3u, 5u}) {
      for (std::size_t max_len : {3u, 4u}) {
        const auto got = beam_decode(model, &prompt, {"c", "a"}, {.beam_width = width, .max_len = max_len});
        bool finished = false;
        const auto want = oracle::frontier_search(model, &prompt, {"c", "a"}, width, max_len, &finished);
        auto want_ids = want.ids;
        if (finished) want_ids.pop_back();
        CHECK(got.ids == want_ids);
        CHECK(got.finished == finished);
        CHECK(got.logprob == doctest::Approx(want.score).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("an unbounded beam finds the global optimum, which no narrower beam beats") {
  const Backbone model(tiny_vocab(), tiny_config(8));
  const std::size_t max_len = 3;
  const auto best = beam_decode(model, nullptr, {"a"}, {.beam_width = 10000, .max_len = max_len});
  const auto exhaustive = oracle::frontier_search(model, nullptr, {"a"}, 10000, max_len);
  CHECK(best.logprob == doctest::Approx(exhaustive.score).epsilon(1e-9));
  for (std::size_t w = 1; w <= 8; ++w) {
    const auto r = beam_decode(model, nullptr, {"a"}, {.beam_width = w, .max_len = max_len});
    if (r.finished) CHECK(r.logprob <= best.logprob + 1e-12);
  }
}

TEST_CASE("encode_content mean-pools the exposed encoder states") {
  const Backbone model(tiny_vocab(), tiny_config(4));
  const auto v = model.encode_content({"a", "b"});
  const auto states = model.encoder_states(nullptr, {"a", "b"});
  for (std::size_t j = 0; j < 8; ++j) CHECK(v.values[j] == doctest::Approx((states(0, j) + states(1, j)) / 2).epsilon(1e-12));
  CHECK(model.encode_content({"a", "b"}) == v);
  const auto single = model.encode_content({"c"});
  const auto single_state = model.encoder_states(nullptr, {"c"});
  for (std::size_t j = 0; j < 8; ++j) CHECK(single.values[j] == single_state(0, j));
  // Reference encoder agrees with the tape encoder.
  const auto ref = oracle::encoder(model, nullptr, model.vocab().encode({"a", "b"}));
  for (std::size_t j = 0; j < 8; ++j) CHECK(states(1, j) == doctest::Approx(ref[1][j]).epsilon(1e-10));
}

TEST_CASE("checkpoint round trip is digest-identical") {
  Backbone model(tiny_vocab(), tiny_config(17));
  train_step(model, nullptr, std::vector<StyledPair>{kPair}, 0.1, UpdateSet::model_only);
  const auto path = std::filesystem::temp_directory_path() / "settp_test_ckpt.bin";
  save_checkpoint(model, path, "abc123");
  const Backbone loaded = load_checkpoint(path);
  CHECK(loaded.digest() == model.digest());
  CHECK(loaded.vocab() == model.vocab());
  CHECK(loaded.config() == model.config());
  CHECK(checkpoint_config_hash(path) == "abc123");
}
