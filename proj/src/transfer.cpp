#include "settp/transfer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "settp/error.hpp"

namespace settp {

QueryVector mean_query(const Backbone& model, const StyleCorpus& corpus, QueryVector::Origin origin,
                       std::size_t source_index) {
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "query over empty corpus '" + corpus.task_id + "'");
  QueryVector q;
  q.origin = origin;
  q.source_index = source_index;
  q.values.assign(model.embedding_dim(), 0.0);
  for (const auto& p : corpus.pairs) {
    const ContentVector c = model.encode_content(p.source);
    for (std::size_t j = 0; j < c.dim(); ++j) q.values[j] += c.values[j];
  }
  for (double& v : q.values) v /= static_cast<double>(corpus.size());
  return q;
}

Queries compute_queries(const Backbone& model, const std::vector<const StyleCorpus*>& sources,
                        const StyleCorpus& target) {
  Queries out;
  for (std::size_t n = 0; n < sources.size(); ++n) {
    out.sources.push_back(mean_query(model, *sources[n], QueryVector::Origin::source, n));
  }
  out.target = mean_query(model, target, QueryVector::Origin::target);
  return out;
}

DomainTemperatures domain_temperature(const std::vector<InstanceSet>& sources, const InstanceSet& target,
                                      double theta_t, double theta_e) {
  if (target.empty()) throw Error(ErrorKind::invalid_argument, "domain temperature: empty target pool");
  if (sources.empty()) throw Error(ErrorKind::invalid_argument, "domain temperature: no source domains");
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k].empty()) {
      throw Error(ErrorKind::invalid_argument, "domain temperature: source domain " + std::to_string(k) + " is empty");
    }
  }
  std::vector<std::vector<std::vector<double>>> source_means(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) {
    for (const auto* e : sources[k]) source_means[k].push_back(e->prompt.matrix.row_mean());
  }

  DomainTemperatures out;
  out.theta_t = theta_t;
  out.theta_e = theta_e;
  out.votes.assign(sources.size(), 0);
  for (const auto* tj : target) {
    const auto tj_mean = tj->prompt.matrix.row_mean();
    double best = -std::numeric_limits<double>::infinity();
    double best_c = 0.0, best_p = 0.0;
    std::size_t best_k = sources.size();
    for (std::size_t k = 0; k < sources.size(); ++k) {
      for (std::size_t i = 0; i < sources[k].size(); ++i) {
        const double c = cosine_similarity(tj->centroid.values, sources[k][i]->centroid.values);
        const double p = cosine_similarity(tj_mean, source_means[k][i]);
        if (c + p > best) {
          best = c + p;
          best_c = c;
          best_p = p;
          best_k = k;
        }
      }
    }
    if (best_k < sources.size() && best_c >= theta_t && best_p >= theta_e) ++out.votes[best_k];
  }
  std::vector<double> counts(out.votes.begin(), out.votes.end());
  out.w = softmax(counts);
  return out;
}

DomainTemperatures uniform_temperature(std::size_t n, double theta_t, double theta_e) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "uniform temperature over zero domains");
  return DomainTemperatures{std::vector<double>(n, 1.0 / static_cast<double>(n)), std::vector<std::size_t>(n, 0),
                            theta_t, theta_e};
}

RetrievalScores retrieval_scores(const std::vector<QueryVector>& sources, const QueryVector& target,
                                 const std::vector<std::vector<double>>& keys, const DomainTemperatures& temps) {
  const std::size_t n = sources.size();
  if (n == 0) throw Error(ErrorKind::invalid_argument, "retrieval over zero sources");
  if (keys.size() != n || temps.w.size() != n) {
    throw Error(ErrorKind::dimension_mismatch, "retrieval: sources, keys, and temperatures differ in count");
  }
  const std::size_t d = target.values.size();
  RetrievalScores out;
  for (std::size_t k = 0; k < n; ++k) {
    if (sources[k].values.size() != d || keys[k].size() != d) {
      throw Error(ErrorKind::dimension_mismatch, "retrieval: query/key dimension mismatch for source " + std::to_string(k));
    }
    const double w = temps.w[k];
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (w * sources[k].values[j] + (1.0 - w) * target.values[j]) * keys[k][j];
    out.logits.push_back(z);
  }
  out.s = softmax(out.logits);
  return out;
}

SoftPrompt interpolate_prompt(const SoftPrompt& target, const std::vector<const SoftPrompt*>& sources,
                              const RetrievalScores& scores, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorKind::invalid_argument, "lambda must be >= 0");
  if (scores.s.size() != sources.size()) throw Error(ErrorKind::dimension_mismatch, "scores vs source prompt count");
  for (const auto* p : sources) {
    if (!p->matrix.same_shape(target.matrix)) {
      throw Error(ErrorKind::dimension_mismatch, "source prompt '" + p->prompt_id + "' differs in shape from the target prompt");
    }
  }
  SoftPrompt out = target;
  out.prompt_id = target.prompt_id + "~";
  if (lambda == 0.0) return out;
  auto o = out.matrix.values();
  for (std::size_t n = 0; n < sources.size(); ++n) {
    const double c = lambda * scores.s[n];
    auto p = sources[n]->matrix.values();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += c * p[k];
  }
  return out;
}

nlohmann::json KeyTrainingConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}};
}

KeyTrainingConfig KeyTrainingConfig::from_json(const nlohmann::json& j) {
  KeyTrainingConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("key training config: ") + e.what());
  }
  if (c.batch_size == 0 || !(c.lr > 0.0)) throw Error(ErrorKind::invalid_argument, "key training: batch_size and lr must be positive");
  return c;
}

std::vector<double> train_keys(const Backbone& model, const SoftPrompt& target_prompt,
                               const std::vector<const SoftPrompt*>& sources, const Queries& queries,
                               const DomainTemperatures& temps, double lambda, const StyleCorpus& target_train,
                               const KeyTrainingConfig& cfg, std::vector<std::vector<double>>& keys) {
  if (target_train.empty()) throw Error(ErrorKind::invalid_argument, "key training needs target pairs");
  const std::size_t n = sources.size();
  std::vector<Matrix> key_mats;
  for (const auto& k : keys) key_mats.push_back(Matrix::row_vector(k));
  std::vector<Matrix*> params;
  for (auto& k : key_mats) params.push_back(&k);
  Optimizer opt(OptimizerKind::adam, cfg.lr);

  // Blended queries do not depend on the keys.
  std::vector<std::vector<double>> blended(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = temps.w.at(k);
    for (std::size_t j = 0; j < queries.target.values.size(); ++j) {
      blended[k].push_back(w * queries.sources.at(k).values.at(j) + (1.0 - w) * queries.target.values[j]);
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(target_train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<double> losses;
  std::vector<StyledPair> batch;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(cfg.batch_size, order.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(target_train.pairs[order[cursor++]]);
    }
    for (std::size_t k = 0; k < n; ++k) keys[k].assign(key_mats[k].values().begin(), key_mats[k].values().end());
    const RetrievalScores sc = retrieval_scores(queries.sources, queries.target, keys, temps);
    const SoftPrompt mixed = interpolate_prompt(target_prompt, sources, sc, lambda);
    const LossGradients g = model.gradients(&mixed, batch, true, false);
    losses.push_back(g.mean_nll);

    // dL/ds_n = lambda <G, P_n>; softmax backward; dz_n/dk_n = blended_n.
    std::vector<double> ds(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) ds[k] = lambda * dot(g.prompt.values(), sources[k]->matrix.values());
    double mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean += sc.s[k] * ds[k];
    std::vector<Matrix> grads;
    for (std::size_t k = 0; k < n; ++k) {
      const double dz = sc.s[k] * (ds[k] - mean);
      Matrix gk(1, blended[k].size());
      for (std::size_t j = 0; j < blended[k].size(); ++j) gk(0, j) = dz * blended[k][j];
      grads.push_back(std::move(gk));
    }
    std::vector<const Matrix*> gptr;
    for (const auto& gk : grads) gptr.push_back(&gk);
    opt.step(params, gptr);
  }
  for (std::size_t k = 0; k < n; ++k) keys[k].assign(key_mats[k].values().begin(), key_mats[k].values().end());
  return losses;
}

nlohmann::ordered_json TransferReport::to_json() const {
  nlohmann::ordered_json j;
  j["source_tasks"] = source_tasks;
  j["w"] = temps.w;
  j["votes"] = temps.votes;
  j["theta_t"] = temps.theta_t;
  j["theta_e"] = temps.theta_e;
  j["s"] = scores.s;
  j["logits"] = scores.logits;
  j["lambda"] = lambda;
  j["key_steps"] = key_steps;
  j["key_losses"] = key_losses;
  return j;
}

}  // namespace settp
