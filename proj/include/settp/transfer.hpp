#pragma once

// Adaptive attentional retrieval: content queries, domain temperatures,
// retrieval scores over source style prompts, and target-prompt interpolation.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"
#include "settp/prompt_store.hpp"
#include "settp/training.hpp"

namespace settp {

struct QueryVector {
  enum class Origin { source, target };

  std::vector<double> values;
  Origin origin = Origin::source;
  std::size_t source_index = 0;
};

/// Mean content vector of the corpus sentences (sources).
QueryVector mean_query(const Backbone& model, const StyleCorpus& corpus, QueryVector::Origin origin,
                       std::size_t source_index = 0);

struct Queries {
  std::vector<QueryVector> sources;
  QueryVector target;
};

Queries compute_queries(const Backbone& model, const std::vector<const StyleCorpus*>& sources,
                        const StyleCorpus& target);

using InstanceSet = std::vector<const InstanceEntry*>;

struct DomainTemperatures {
  std::vector<double> w;
  std::vector<std::size_t> votes;
  double theta_t = 0.8;
  double theta_e = 0.8;
};

/// For every target entry the (domain, entry) pair maximizing content cosine
/// plus prompt-row-mean cosine wins; it votes for its domain when both
/// cosines reach their thresholds. Ties go to the lowest domain, then entry.
/// Returns softmax over the vote counts.
DomainTemperatures domain_temperature(const std::vector<InstanceSet>& sources, const InstanceSet& target,
                                      double theta_t = 0.8, double theta_e = 0.8);

/// Uniform temperatures, used when the domain-temperature step is ablated.
DomainTemperatures uniform_temperature(std::size_t n, double theta_t = 0.8, double theta_e = 0.8);

struct RetrievalScores {
  std::vector<double> s;
  std::vector<double> logits;
};

/// logit_n = (w_n q_S^n + (1 - w_n) q_T) . k_n, s = softmax over n.
RetrievalScores retrieval_scores(const std::vector<QueryVector>& sources, const QueryVector& target,
                                 const std::vector<std::vector<double>>& keys, const DomainTemperatures& temps);

/// P_T + lambda * sum_n s_n P_S^n. lambda == 0 returns an exact copy of P_T.
SoftPrompt interpolate_prompt(const SoftPrompt& target, const std::vector<const SoftPrompt*>& sources,
                              const RetrievalScores& scores, double lambda);

struct KeyTrainingConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 16;
  double lr = 1e-2;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static KeyTrainingConfig from_json(const nlohmann::json& j);
};

/// Trains the source keys on the target corpus: the loss is the NLL under the
/// interpolated prompt, so keys move through the retrieval scores while every
/// prompt stays fixed. Returns the per-step batch NLL.
std::vector<double> train_keys(const Backbone& model, const SoftPrompt& target_prompt,
                               const std::vector<const SoftPrompt*>& sources, const Queries& queries,
                               const DomainTemperatures& temps, double lambda, const StyleCorpus& target_train,
                               const KeyTrainingConfig& cfg, std::vector<std::vector<double>>& keys);

struct TransferReport {
  std::vector<std::string> source_tasks;
  DomainTemperatures temps;
  RetrievalScores scores;
  double lambda = 0.5;
  std::size_t key_steps = 0;
  std::vector<double> key_losses;

  nlohmann::ordered_json to_json() const;
};

}  // namespace settp
