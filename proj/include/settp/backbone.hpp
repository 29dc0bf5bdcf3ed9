#pragma once

// Compact attention encoder-decoder with soft-prompt conditioning.
//
// Architecture (pre-norm, learned positions, tied output embedding):
//   encoder input  = [P ; tok_emb[x] + enc_pos[0..t_x)]          ((m + t_x) x e)
//   encoder layer  = h += MHA(LN1 h); h += FFN(LN2 h)
//   memory         = LN_enc(h)
//   decoder input  = tok_emb[<bos> y] + dec_pos[0..t_y]
//   decoder layer  = d += causal MHA(LN1 d); d += MHA(LN2 d, memory); d += FFN(LN3 d)
//   logits         = LN_dec(d) tok_emb^T + out_bias
// FFN is relu(x W1 + b1) W2 + b2; attention projections have no bias.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/corpus.hpp"
#include "settp/matrix.hpp"
#include "settp/soft_prompt.hpp"

namespace settp {

struct BackboneConfig {
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_width = 128;
  std::size_t max_positions = 64;
  std::uint64_t seed = 0;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

nlohmann::json to_json(const BackboneConfig& c);
/// Missing keys keep their defaults.
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Mean-pooled final encoder state of a text (no prompt).
struct ContentVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const ContentVector&, const ContentVector&) = default;
};

enum class UpdateSet { prompt_only, model_only, both };

struct LossGradients {
  double mean_nll = 0.0;
  /// Empty unless requested.
  Matrix prompt;
  /// One entry per parameter; empty matrices for frozen or unrequested ones.
  std::vector<Matrix> model;
};

class Backbone {
 public:
  Backbone(Vocabulary vocab, BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t embedding_dim() const { return config_.d_model; }

  std::size_t parameter_count() const;
  const std::vector<std::string>& parameter_names() const { return names_; }
  const Matrix& parameter(std::string_view name) const;
  Matrix& parameter(std::string_view name);
  std::span<Matrix> parameters() { return params_; }
  std::span<const Matrix> parameters() const { return params_; }

  /// Trainable mask. Frozen parameters are never touched by an optimizer step.
  void set_trainable(bool trainable);
  bool trainable(std::size_t index) const { return trainable_[index]; }
  const std::vector<bool>& trainable_mask() const { return trainable_; }

  /// SHA-256 over every parameter name, shape, and value.
  std::string digest() const;

  /// log Pr(y | [P; x]). prompt == nullptr means no prefix.
  double forward_logprob(const SoftPrompt* prompt, const StyledPair& pair) const;
  /// Mean NLL over the batch plus its gradients.
  LossGradients gradients(const SoftPrompt* prompt, std::span<const StyledPair> batch,
                          bool want_prompt, bool want_model) const;

  /// Final (normalized) encoder states, (m + t_x) x e.
  Matrix encoder_states(const SoftPrompt* prompt, const TokenSeq& text) const;
  ContentVector encode_content(const TokenSeq& text) const;

  /// Encoder memory for decoding; same as encoder_states on ids.
  Matrix encode_ids(const SoftPrompt* prompt, const std::vector<int>& ids) const;
  /// log-softmax over the vocabulary for the token after `prefix` (which starts with <bos>).
  std::vector<double> next_token_logprobs(const Matrix& memory, const std::vector<int>& prefix) const;

  void check_prompt(const SoftPrompt* prompt) const;

 private:
  friend Backbone load_checkpoint(const std::filesystem::path& path);

  struct AttnIdx {
    std::size_t wq, wk, wv, wo;
  };
  struct LnIdx {
    std::size_t g, b;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };
  struct EncLayer {
    LnIdx ln1, ln2;
    AttnIdx attn;
    FfnIdx ffn;
  };
  struct DecLayer {
    LnIdx ln1, ln2, ln3;
    AttnIdx self, cross;
    FfnIdx ffn;
  };

  std::size_t add_param(std::string name, std::size_t rows, std::size_t cols);
  void build_layout();
  void initialize();

  Vocabulary vocab_;
  BackboneConfig config_;
  std::vector<std::string> names_;
  std::vector<Matrix> params_;
  std::vector<bool> trainable_;

  std::size_t tok_emb_ = 0, enc_pos_ = 0, dec_pos_ = 0, out_bias_ = 0;
  LnIdx enc_ln_{}, dec_ln_{};
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;

  friend class BackboneGraph;
};

/// One gradient-descent step on the parameters named by `update`.
/// Returns the mean NLL before the update.
double train_step(Backbone& model, SoftPrompt* prompt, std::span<const StyledPair> batch,
                  double lr, UpdateSet update);

struct DecodeResult {
  TokenSeq tokens;
  std::vector<int> ids;
  /// Cumulative log-probability, including <eos> when finished.
  double logprob = 0.0;
  /// False when max_len was reached without <eos>.
  bool finished = true;
};

struct BeamOptions {
  std::size_t beam_width = 4;
  /// Maximum generated tokens, counting <eos>.
  std::size_t max_len = 20;
  /// Score = logprob / len^alpha when alpha > 0. Disabled by default.
  double length_penalty = 0.0;
};

DecodeResult beam_decode(const Backbone& model, const SoftPrompt* prompt, const TokenSeq& source,
                         const BeamOptions& options);
DecodeResult greedy_decode(const Backbone& model, const SoftPrompt* prompt, const TokenSeq& source,
                           std::size_t max_len);

void save_checkpoint(const Backbone& model, const std::filesystem::path& path,
                     const std::string& config_hash);
Backbone load_checkpoint(const std::filesystem::path& path);
/// Config hash recorded in a checkpoint, without loading tensors.
std::string checkpoint_config_hash(const std::filesystem::path& path);

}  // namespace settp
