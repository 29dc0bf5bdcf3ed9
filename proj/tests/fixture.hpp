#pragma once

// A small backbone pretrained once per test process on a two-topic corpus.

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"
#include "settp/training.hpp"

namespace testing_support {

struct PretrainedFixture {
  settp::SyntheticStyleSpec spec;
  settp::StyleCorpus corpus;
  settp::Backbone model;
};

inline settp::SyntheticStyleSpec fixture_spec() {
  settp::SyntheticStyleSpec spec;
  spec.name = "swap";
  spec.transform = settp::Transform::token_substitution;
  spec.vocab_size = 16;
  spec.seed = 4;
  return spec;
}

inline const PretrainedFixture& pretrained_fixture() {
  static const PretrainedFixture fx = [] {
    const auto spec = fixture_spec();
    auto corpus = settp::generate_synthetic_task(spec, 200);
    settp::BackboneConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ffn_width = 32;
    cfg.max_positions = 32;
    cfg.seed = 2;
    settp::Backbone model(corpus.vocab, cfg);
    settp::PretrainConfig pc;
    pc.epochs = 30;
    pc.lr = 3e-3;
    settp::pretrain_backbone(model, {&corpus}, pc);
    model.set_trainable(false);
    return PretrainedFixture{spec, std::move(corpus), std::move(model)};
  }();
  return fx;
}

}  // namespace testing_support
