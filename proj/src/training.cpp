#include "settp/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "settp/error.hpp"

namespace settp {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw Error(ErrorKind::parse, "unknown optimizer '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::invalid_argument, std::string("train config: ") + what + " must be positive");
  };
  positive(batch_size > 0, "batch_size");
  positive(lr_prompt > 0.0 && std::isfinite(lr_prompt), "lr_prompt");
  positive(lr_model > 0.0 && std::isfinite(lr_model), "lr_model");
  positive(max_seq_len > 0, "max_seq_len");
  positive(divergence_factor > 0.0, "divergence_factor");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size},
          {"lr_prompt", lr_prompt}, {"lr_model", lr_model},
          {"seed", seed},           {"max_seq_len", max_seq_len},
          {"optimizer", to_string(optimizer)}, {"patience", patience},
          {"divergence_factor", divergence_factor}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_prompt = j.value("lr_prompt", c.lr_prompt);
    c.lr_model = j.value("lr_model", c.lr_model);
    c.seed = j.value("seed", c.seed);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.optimizer = parse_optimizer(j.value("optimizer", std::string(to_string(c.optimizer))));
    c.patience = j.value("patience", c.patience);
    c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::optional<double> TrainLog::nll(std::size_t epoch, std::string_view split) const {
  for (const auto& r : records) {
    if (r.epoch == epoch && r.split == split) return r.nll;
  }
  return std::nullopt;
}

void TrainLog::append_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::io, "cannot append to " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["run"] = run_id;
    j["epoch"] = r.epoch;
    j["split"] = r.split;
    j["nll"] = r.nll;
    out << j.dump() << '\n';
  }
}

void Optimizer::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::dimension_mismatch, "optimizer: params vs grads");
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i] == nullptr || grads[i]->empty()) continue;
      auto p = params[i]->values();
      auto g = grads[i]->values();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr_ * g[k];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorKind::dimension_mismatch, "optimizer: parameter set changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr || grads[i]->empty()) continue;
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

double corpus_nll(const Backbone& model, const SoftPrompt* prompt, const StyleCorpus& corpus) {
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "NLL of an empty corpus");
  double total = 0.0;
  for (const auto& p : corpus.pairs) total -= model.forward_logprob(prompt, p);
  return total / static_cast<double>(corpus.size());
}

namespace {

void check_lengths(const StyleCorpus& corpus, std::size_t max_len) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus.pairs[i];
    if (p.source.size() > max_len || p.target.size() > max_len) {
      throw Error(ErrorKind::invalid_argument,
                  "pair " + std::to_string(i) + " of '" + corpus.task_id + "' exceeds max_seq_len");
    }
  }
}

// Shared epoch loop. Exactly one of (prompt updates, model updates) is active;
// `writable` is null for prompt-only runs and receives the model updates
// otherwise. Keeps the parameters of the best validation epoch.
TrainLog fit(const Backbone& model, Backbone* writable, const SoftPrompt* prompt, SoftPrompt* writable_prompt,
             const StyleCorpus& train, const StyleCorpus* validation, const TrainConfig& cfg, std::string run_id) {
  cfg.validate();
  const bool train_prompt_rows = writable_prompt != nullptr;
  if (train.empty()) throw Error(ErrorKind::invalid_argument, "training corpus '" + train.task_id + "' is empty");
  check_lengths(train, cfg.max_seq_len);
  if (validation != nullptr && validation->empty()) validation = nullptr;
  model.check_prompt(prompt);

  TrainLog log;
  log.run_id = std::move(run_id);
  const double initial = corpus_nll(model, prompt, train);
  log.records.push_back({0, "train", initial});
  double best_val = std::numeric_limits<double>::infinity();
  if (validation != nullptr) {
    best_val = corpus_nll(model, prompt, *validation);
    log.records.push_back({0, "validation", best_val});
  }
  if (!std::isfinite(initial)) throw Error(ErrorKind::numeric, log.run_id + ": initial NLL is not finite");

  std::vector<Matrix*> params;
  if (train_prompt_rows) {
    params.push_back(&writable_prompt->matrix);
  } else {
    for (auto& p : writable->parameters()) params.push_back(&p);
  }
  Optimizer opt(cfg.optimizer, train_prompt_rows ? cfg.lr_prompt : cfg.lr_model);
  std::vector<Matrix> best;
  auto snapshot = [&] {
    best.clear();
    for (auto* p : params) best.push_back(*p);
  };
  if (validation != nullptr) snapshot();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<StyledPair> batch;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(train.pairs[order[k]]);
      }
      const LossGradients g = model.gradients(prompt, batch, train_prompt_rows, !train_prompt_rows);
      sum += g.mean_nll * static_cast<double>(batch.size());
      std::vector<const Matrix*> grads;
      if (train_prompt_rows) {
        grads.push_back(&g.prompt);
      } else {
        for (std::size_t i = 0; i < g.model.size(); ++i) {
          grads.push_back(writable->trainable(i) ? &g.model[i] : nullptr);
        }
      }
      opt.step(params, grads);
    }
    const double epoch_nll = sum / static_cast<double>(train.size());
    log.records.push_back({epoch, "train", epoch_nll});
    log.epochs_run = epoch;
    if (!std::isfinite(epoch_nll) || epoch_nll > cfg.divergence_factor * initial) {
      std::ostringstream msg;
      msg << log.run_id << ": diverged at epoch " << epoch << " (train NLL " << epoch_nll << ", initial " << initial
          << ", limit " << cfg.divergence_factor << "x)";
      throw Error(ErrorKind::divergence, msg.str());
    }
    if (validation == nullptr) {
      log.kept_epoch = epoch;
      continue;
    }
    const double val = corpus_nll(model, prompt, *validation);
    log.records.push_back({epoch, "validation", val});
    if (val < best_val) {
      best_val = val;
      log.kept_epoch = epoch;
      stale = 0;
      snapshot();
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      log.early_stopped = true;
      break;
    }
  }
  if (validation != nullptr) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = std::move(best[i]);
  }
  return log;
}

}  // namespace

TrainLog train_prompt(const Backbone& model, SoftPrompt& prompt, const StyleCorpus& train, const TrainConfig& cfg,
                      const StyleCorpus* validation) {
  if (prompt.length() == 0) throw Error(ErrorKind::invalid_argument, "cannot tune an empty prompt");
  return fit(model, nullptr, &prompt, &prompt, train, validation, cfg, prompt.prompt_id);
}

StyleEntry pretrain_style_prompt(const Backbone& model, const StyleCorpus& train, const TrainConfig& cfg,
                                 std::size_t m, const StyleCorpus* validation, TrainLog* log) {
  StyleEntry entry;
  entry.prompt = init_prompt(m, model.embedding_dim(), cfg.seed, train.task_id + "/style");
  TrainLog l = train_prompt(model, entry.prompt, train, cfg, validation);
  entry.key = key_from_prompt(entry.prompt);
  if (log != nullptr) *log = std::move(l);
  return entry;
}

std::vector<InstanceEntry> pretrain_instance_prompts(const Backbone& model, const StyleCorpus& train,
                                                     const ClusterAssignment& assignment, const TrainConfig& cfg,
                                                     std::size_t m, std::vector<TrainLog>* logs) {
  if (assignment.labels.size() != train.size()) {
    throw Error(ErrorKind::dimension_mismatch, "cluster assignment does not cover the corpus");
  }
  if (assignment.centroids.size() != assignment.clusters) {
    throw Error(ErrorKind::invalid_argument, "cluster assignment carries no centroids");
  }
  std::vector<StyleCorpus> parts(assignment.clusters);
  for (std::size_t k = 0; k < assignment.clusters; ++k) {
    parts[k].task_id = train.task_id;
    parts[k].style_attribute = train.style_attribute;
    parts[k].vocab = train.vocab;
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (assignment.labels[i] >= assignment.clusters) throw Error(ErrorKind::invalid_argument, "label out of range");
    parts[assignment.labels[i]].pairs.push_back(train.pairs[i]);
  }
  std::vector<InstanceEntry> out;
  for (std::size_t k = 0; k < assignment.clusters; ++k) {
    if (parts[k].empty()) throw Error(ErrorKind::invalid_argument, "cluster " + std::to_string(k) + " is empty");
    TrainConfig c = cfg;
    c.seed = cfg.seed + k;
    InstanceEntry e;
    e.prompt = init_prompt(m, model.embedding_dim(), c.seed, train.task_id + "/ins/" + std::to_string(k));
    e.centroid = assignment.centroids[k];
    e.cluster_index = k;
    TrainLog l = train_prompt(model, e.prompt, parts[k], c);
    if (logs != nullptr) logs->push_back(std::move(l));
    out.push_back(std::move(e));
  }
  return out;
}

Backbone tune_target(const Backbone& model, const SoftPrompt* prompt, const StyleCorpus& train,
                     const TrainConfig& cfg, const StyleCorpus* validation, TrainLog* log) {
  Backbone tuned = model;
  tuned.set_trainable(true);
  TrainLog l = fit(tuned, &tuned, prompt, nullptr, train, validation, cfg,
                   train.task_id + "/target");
  if (log != nullptr) *log = std::move(l);
  return tuned;
}

void PretrainConfig::validate() const {
  if (batch_size == 0 || !(lr > 0.0) || !(mask_prob >= 0.0 && mask_prob < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "pretrain config: need batch_size > 0, lr > 0, mask_prob in [0, 1)");
  }
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}, {"mask_prob", mask_prob}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.mask_prob = j.value("mask_prob", c.mask_prob);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("pretrain config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainLog pretrain_backbone(Backbone& model, const std::vector<const StyleCorpus*>& corpora, const PretrainConfig& cfg) {
  cfg.validate();
  std::vector<TokenSeq> sentences;
  std::set<TokenSeq> seen;
  for (const auto* c : corpora) {
    for (const auto& p : c->pairs) {
      for (const auto* s : {&p.source, &p.target}) {
        if (seen.insert(*s).second) sentences.push_back(*s);
      }
    }
  }
  if (sentences.empty()) throw Error(ErrorKind::invalid_argument, "pretraining corpus is empty");

  model.set_trainable(true);
  std::vector<Matrix*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  Optimizer opt(OptimizerKind::adam, cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution mask(cfg.mask_prob);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  log.run_id = "backbone";
  std::vector<StyledPair> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        StyledPair pair{sentences[order[k]], sentences[order[k]]};
        for (auto& t : pair.source) {
          if (mask(rng)) t = "<unk>";
        }
        batch.push_back(std::move(pair));
      }
      const LossGradients g = model.gradients(nullptr, batch, false, true);
      sum += g.mean_nll * static_cast<double>(batch.size());
      std::vector<const Matrix*> grads;
      for (const auto& m : g.model) grads.push_back(&m);
      opt.step(params, grads);
    }
    const double nll = sum / static_cast<double>(sentences.size());
    if (!std::isfinite(nll)) throw Error(ErrorKind::divergence, "backbone pretraining diverged at epoch " + std::to_string(epoch));
    log.records.push_back({epoch, "train", nll});
    log.epochs_run = log.kept_epoch = epoch;
  }
  return log;
}

}  // namespace settp
