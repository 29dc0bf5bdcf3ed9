#pragma once

// Prompt-tunable inference: encode the source, retrieve the nearest instance
// prompt of the task, decode with beam search.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"
#include "settp/prompt_store.hpp"

namespace settp {

struct InferenceOptions {
  BeamOptions beam;
  /// Replace retrieval by a seeded uniform choice over the task's entries.
  bool random_prompt = false;
  std::uint64_t seed = 0;
  /// Search every task of the pool instead of only `task_id`.
  bool all_tasks = false;
  /// Joint conditioning: decode with [style; instance; x] when set.
  const SoftPrompt* style_prefix = nullptr;
};

struct InferenceResult {
  TokenSeq source;
  TokenSeq output;
  std::string prompt_id;
  double logprob = 0.0;
  bool finished = true;
  /// Non-empty when the item failed; the other fields are then unspecified.
  std::string error;
};

/// `item` seeds the random-prompt choice, so batch item i equals a single call with item = i.
InferenceResult tunable_infer(const Backbone& model, const InstancePromptPool& pool, const std::string& task_id,
                              const TokenSeq& source, const InferenceOptions& options = {}, std::size_t item = 0);

/// tunable_infer over every pair of the corpus, in order. Item failures are
/// recorded in the result instead of aborting the batch.
std::vector<InferenceResult> batch_infer(const Backbone& model, const InstancePromptPool& pool,
                                         const std::string& task_id, const StyleCorpus& corpus,
                                         const InferenceOptions& options = {});

/// One {"source", "output", "prompt_id", "logprob"} object per line; failed
/// items carry "error" instead.
void write_inference_jsonl(const std::vector<InferenceResult>& results, const std::filesystem::path& path);
/// Inverse of write_inference_jsonl (finished is not stored and reads as true).
std::vector<InferenceResult> read_inference_jsonl(const std::filesystem::path& path);

}  // namespace settp
