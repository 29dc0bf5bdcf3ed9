#include "settp/inference.hpp"

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "settp/error.hpp"

namespace settp {

InferenceResult tunable_infer(const Backbone& model, const InstancePromptPool& pool, const std::string& task_id,
                              const TokenSeq& source, const InferenceOptions& options, std::size_t item) {
  const InstanceEntry* entry = nullptr;
  if (options.random_prompt) {
    const auto entries = pool.entries_for(task_id);
    if (entries.empty()) throw Error(ErrorKind::not_found, "instance pool has no entries for '" + task_id + "'");
    std::seed_seq seq{options.seed, static_cast<std::uint64_t>(item)};
    std::mt19937_64 rng(seq);
    entry = entries[std::uniform_int_distribution<std::size_t>(0, entries.size() - 1)(rng)];
  } else {
    const ContentVector query = model.encode_content(source);
    entry = options.all_tasks ? nearest_instance_any_task(pool, query).second
                              : &nearest_instance(pool, query, task_id);
  }

  InferenceResult r;
  r.source = source;
  r.prompt_id = entry->prompt.prompt_id;
  DecodeResult d;
  if (options.style_prefix != nullptr) {
    const SoftPrompt joint = concat_prompts(*options.style_prefix, entry->prompt, r.prompt_id);
    d = beam_decode(model, &joint, source, options.beam);
  } else {
    d = beam_decode(model, &entry->prompt, source, options.beam);
  }
  r.output = std::move(d.tokens);
  r.logprob = d.logprob;
  r.finished = d.finished;
  return r;
}

std::vector<InferenceResult> batch_infer(const Backbone& model, const InstancePromptPool& pool,
                                         const std::string& task_id, const StyleCorpus& corpus,
                                         const InferenceOptions& options) {
  std::vector<InferenceResult> out(corpus.size());
  const auto n = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      out[idx] = tunable_infer(model, pool, task_id, corpus.pairs[idx].source, options, idx);
    } catch (const std::exception& e) {
      out[idx] = InferenceResult{};
      out[idx].source = corpus.pairs[idx].source;
      out[idx].error = e.what();
    }
  }
  return out;
}

void write_inference_jsonl(const std::vector<InferenceResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["source"] = detokenize(r.source);
    if (r.error.empty()) {
      j["output"] = detokenize(r.output);
      j["prompt_id"] = r.prompt_id;
      j["logprob"] = r.logprob;
    } else {
      j["error"] = r.error;
    }
    out << j.dump() << '\n';
  }
}

std::vector<InferenceResult> read_inference_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<InferenceResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      InferenceResult r;
      r.source = tokenize(j.at("source").get<std::string>());
      if (j.contains("error")) {
        r.error = j["error"].get<std::string>();
        if (r.error.empty()) r.error = "unknown error";
      } else {
        r.output = tokenize(j.at("output").get<std::string>());
        r.prompt_id = j.at("prompt_id").get<std::string>();
        r.logprob = j.at("logprob").get<double>();
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace settp
