#pragma once

// Training procedures: backbone pretraining (denoising), source style-prompt
// and instance-prompt pretraining with the model frozen, and target tuning of
// the model with the interpolated prompt frozen.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/backbone.hpp"
#include "settp/clustering.hpp"
#include "settp/corpus.hpp"
#include "settp/prompt_store.hpp"

namespace settp {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr_prompt = 1e-3;
  double lr_model = 3e-5;
  std::uint64_t seed = 0;
  std::size_t max_seq_len = 32;
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// Early stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 5;
  /// Abort when the epoch NLL exceeds this multiple of the initial NLL.
  double divergence_factor = 10.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double nll = 0.0;
};

struct TrainLog {
  std::string run_id;
  std::vector<EpochRecord> records;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  /// Epoch whose parameters were kept (best validation NLL, or the last epoch).
  std::size_t kept_epoch = 0;

  /// NLL of `split` at `epoch`; nullopt when not logged.
  std::optional<double> nll(std::size_t epoch, std::string_view split) const;
  /// Appends {"run", "epoch", "split", "nll"} lines.
  void append_jsonl(const std::filesystem::path& path) const;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD over a fixed set of tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}
  /// `grads[i]` may be empty, in which case `params[i]` is skipped.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);
  double lr() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Tunes `prompt` on `train` with the model frozen.
TrainLog train_prompt(const Backbone& model, SoftPrompt& prompt, const StyleCorpus& train,
                      const TrainConfig& cfg, const StyleCorpus* validation = nullptr);

/// Randomly initialized m-row prompt tuned on the corpus; the key is the
/// trained prompt's row mean.
StyleEntry pretrain_style_prompt(const Backbone& model, const StyleCorpus& train, const TrainConfig& cfg,
                                 std::size_t m, const StyleCorpus* validation = nullptr, TrainLog* log = nullptr);

/// One prompt per cluster, trained only on that cluster's pairs. Cluster k is
/// initialized with seed cfg.seed + k.
std::vector<InstanceEntry> pretrain_instance_prompts(const Backbone& model, const StyleCorpus& train,
                                                     const ClusterAssignment& assignment, const TrainConfig& cfg,
                                                     std::size_t m, std::vector<TrainLog>* logs = nullptr);

/// Copy of `model` tuned on `train` with `prompt` (may be null) as a frozen prefix.
Backbone tune_target(const Backbone& model, const SoftPrompt* prompt, const StyleCorpus& train,
                     const TrainConfig& cfg, const StyleCorpus* validation = nullptr, TrainLog* log = nullptr);

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Probability that an input token is replaced by <unk>.
  double mask_prob = 0.25;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

/// Trains every model parameter to reconstruct each distinct sentence of the
/// corpora (sources and targets) from a copy with tokens masked afresh every epoch.
TrainLog pretrain_backbone(Backbone& model, const std::vector<const StyleCorpus*>& corpora,
                           const PretrainConfig& cfg);

/// Mean NLL of the corpus under (model, prompt).
double corpus_nll(const Backbone& model, const SoftPrompt* prompt, const StyleCorpus& corpus);

}  // namespace settp
