#include "settp/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "settp/autograd.hpp"
#include "settp/container.hpp"
#include "settp/error.hpp"

namespace settp {

SoftPrompt concat_prompts(const SoftPrompt& a, const SoftPrompt& b, std::string prompt_id) {
  if (a.width() != b.width()) throw Error(ErrorKind::dimension_mismatch, "concat_prompts: widths differ");
  SoftPrompt out{Matrix(a.length() + b.length(), a.width()), std::move(prompt_id)};
  std::copy(a.matrix.values().begin(), a.matrix.values().end(), out.matrix.data());
  std::copy(b.matrix.values().begin(), b.matrix.values().end(), out.matrix.data() + a.matrix.size());
  return out;
}

// Builds the backbone computation on a tape. Parameter leaves are created once
// per graph; whether they track gradients decides what backward() produces.
class BackboneGraph {
 public:
  BackboneGraph(const Backbone& m, ad::Tape& tape, bool model_grad) : m_(m), tape_(tape) {
    vars_.reserve(m.params_.size());
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
      vars_.push_back(tape.leaf(m.params_[i], model_grad && m.trainable_[i]));
    }
  }

  ad::Var param(std::size_t i) const { return vars_[i]; }

  ad::Var encode(std::optional<ad::Var> prompt, const std::vector<int>& ids) {
    check_length(ids.size());
    ad::Var h = tape_.add(tape_.gather_rows(param(m_.tok_emb_), ids),
                          tape_.take_rows(param(m_.enc_pos_), ids.size()));
    if (prompt) h = tape_.concat_rows(*prompt, h);
    for (const auto& layer : m_.enc_) {
      const ad::Var x = ln(h, layer.ln1);
      h = tape_.add(h, attention(x, x, layer.attn, false));
      h = tape_.add(h, ffn(ln(h, layer.ln2), layer.ffn));
    }
    return ln(h, m_.enc_ln_);
  }

  /// Normalized decoder states for the given decoder input (starting with <bos>).
  ad::Var decode_hidden(ad::Var memory, const std::vector<int>& dec_in) {
    check_length(dec_in.size());
    ad::Var d = tape_.add(tape_.gather_rows(param(m_.tok_emb_), dec_in),
                          tape_.take_rows(param(m_.dec_pos_), dec_in.size()));
    for (const auto& layer : m_.dec_) {
      const ad::Var x = ln(d, layer.ln1);
      d = tape_.add(d, attention(x, x, layer.self, true));
      d = tape_.add(d, attention(ln(d, layer.ln2), memory, layer.cross, false));
      d = tape_.add(d, ffn(ln(d, layer.ln3), layer.ffn));
    }
    return ln(d, m_.dec_ln_);
  }

  ad::Var logits(ad::Var hidden) {
    return tape_.add_row(tape_.matmul_nt(hidden, param(m_.tok_emb_)), param(m_.out_bias_));
  }

 private:
  void check_length(std::size_t n) const {
    if (n > m_.config_.max_positions) {
      throw Error(ErrorKind::invalid_argument,
                  "sequence of length " + std::to_string(n) + " exceeds max_positions");
    }
  }

  ad::Var ln(ad::Var x, const Backbone::LnIdx& idx) {
    return tape_.layer_norm(x, param(idx.g), param(idx.b));
  }

  ad::Var attention(ad::Var query_in, ad::Var kv_in, const Backbone::AttnIdx& idx, bool causal) {
    const ad::Var q = tape_.matmul(query_in, param(idx.wq));
    const ad::Var k = tape_.matmul(kv_in, param(idx.wk));
    const ad::Var v = tape_.matmul(kv_in, param(idx.wv));
    const ad::Var o = tape_.attention(q, k, v, m_.config_.heads, causal);
    return tape_.matmul(o, param(idx.wo));
  }

  ad::Var ffn(ad::Var x, const Backbone::FfnIdx& idx) {
    const ad::Var h = tape_.relu(tape_.add_row(tape_.matmul(x, param(idx.w1)), param(idx.b1)));
    return tape_.add_row(tape_.matmul(h, param(idx.w2)), param(idx.b2));
  }

  const Backbone& m_;
  ad::Tape& tape_;
  std::vector<ad::Var> vars_;
};

namespace {

std::vector<int> with_bos(const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size() + 1);
  out.push_back(Vocabulary::kBos);
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<double> log_softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

}  // namespace

Backbone::Backbone(Vocabulary vocab, BackboneConfig config)
    : vocab_(std::move(vocab)), config_(config) {
  if (config_.d_model == 0 || config_.heads == 0 || config_.d_model % config_.heads != 0) {
    throw Error(ErrorKind::invalid_argument, "d_model must be a positive multiple of heads");
  }
  if (config_.layers == 0 || config_.ffn_width == 0 || config_.max_positions == 0) {
    throw Error(ErrorKind::invalid_argument, "layers, ffn_width, max_positions must be positive");
  }
  build_layout();
  initialize();
}

std::size_t Backbone::add_param(std::string name, std::size_t rows, std::size_t cols) {
  names_.push_back(std::move(name));
  params_.emplace_back(rows, cols);
  trainable_.push_back(true);
  return params_.size() - 1;
}

void Backbone::build_layout() {
  const std::size_t e = config_.d_model, f = config_.ffn_width, v = vocab_.size();
  tok_emb_ = add_param("tok_emb", v, e);
  enc_pos_ = add_param("enc_pos", config_.max_positions, e);
  dec_pos_ = add_param("dec_pos", config_.max_positions, e);
  auto ln = [&](const std::string& p) {
    return LnIdx{add_param(p + ".g", 1, e), add_param(p + ".b", 1, e)};
  };
  auto attn = [&](const std::string& p) {
    return AttnIdx{add_param(p + ".wq", e, e), add_param(p + ".wk", e, e),
                   add_param(p + ".wv", e, e), add_param(p + ".wo", e, e)};
  };
  auto ffn = [&](const std::string& p) {
    return FfnIdx{add_param(p + ".w1", e, f), add_param(p + ".b1", 1, f),
                  add_param(p + ".w2", f, e), add_param(p + ".b2", 1, e)};
  };
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncLayer layer;
    layer.ln1 = ln(p + ".ln1");
    layer.attn = attn(p + ".attn");
    layer.ln2 = ln(p + ".ln2");
    layer.ffn = ffn(p + ".ffn");
    enc_.push_back(layer);
  }
  enc_ln_ = ln("enc.ln");
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecLayer layer;
    layer.ln1 = ln(p + ".ln1");
    layer.self = attn(p + ".self");
    layer.ln2 = ln(p + ".ln2");
    layer.cross = attn(p + ".cross");
    layer.ln3 = ln(p + ".ln3");
    layer.ffn = ffn(p + ".ffn");
    dec_.push_back(layer);
  }
  dec_ln_ = ln("dec.ln");
  out_bias_ = add_param("out.b", 1, v);
}

void Backbone::initialize() {
  std::mt19937_64 rng(config_.seed);
  const double e = static_cast<double>(config_.d_model);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = names_[i];
    Matrix& p = params_[i];
    const bool is_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool is_bias = name.size() > 2 && (name.compare(name.size() - 2, 2, ".b") == 0 ||
                                              name.compare(name.size() - 3, 3, ".b1") == 0 ||
                                              name.compare(name.size() - 3, 3, ".b2") == 0);
    if (is_gain) {
      p.fill(1.0);
    } else if (is_bias) {
      p.fill(0.0);
    } else {
      // Embeddings: unit-norm rows on average. Projections: 1/sqrt(fan_in).
      const bool embedding = name == "tok_emb" || name == "enc_pos" || name == "dec_pos";
      const double stddev = embedding ? 1.0 / std::sqrt(e) : 1.0 / std::sqrt(static_cast<double>(p.rows()));
      std::normal_distribution<double> dist(0.0, stddev);
      for (double& x : p.values()) x = dist(rng);
    }
  }
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

const Matrix& Backbone::parameter(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return params_[i];
  }
  throw Error(ErrorKind::not_found, "no parameter named '" + std::string(name) + "'");
}

Matrix& Backbone::parameter(std::string_view name) {
  return const_cast<Matrix&>(std::as_const(*this).parameter(name));
}

void Backbone::set_trainable(bool trainable) { std::fill(trainable_.begin(), trainable_.end(), trainable); }

std::string Backbone::digest() const {
  Digest d;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    d.update(names_[i]);
    d.update(params_[i]);
  }
  return d.hex();
}

void Backbone::check_prompt(const SoftPrompt* prompt) const {
  if (prompt != nullptr && prompt->width() != config_.d_model) {
    throw Error(ErrorKind::dimension_mismatch,
                "prompt width " + std::to_string(prompt->width()) + " != embedding dim " +
                    std::to_string(config_.d_model));
  }
}

double Backbone::forward_logprob(const SoftPrompt* prompt, const StyledPair& pair) const {
  check_prompt(prompt);
  ad::Tape tape(false);
  BackboneGraph g(*this, tape, false);
  std::optional<ad::Var> p;
  if (prompt != nullptr) p = tape.leaf(prompt->matrix, false);
  const auto target = vocab_.encode(pair.target);
  const ad::Var memory = g.encode(p, vocab_.encode(pair.source));
  const ad::Var logits = g.logits(g.decode_hidden(memory, with_bos(target)));
  const ad::Var nll = tape.cross_entropy(logits, with_eos(target));
  return -tape.value(nll)(0, 0);
}

LossGradients Backbone::gradients(const SoftPrompt* prompt, std::span<const StyledPair> batch,
                                  bool want_prompt, bool want_model) const {
  check_prompt(prompt);
  if (batch.empty()) throw Error(ErrorKind::invalid_argument, "empty batch");
  LossGradients out;
  if (want_prompt && prompt != nullptr) out.prompt = Matrix(prompt->length(), prompt->width());
  out.model.resize(params_.size());
  if (want_model) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (trainable_[i]) out.model[i] = Matrix(params_[i].rows(), params_[i].cols());
    }
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ad::Tape tape(want_prompt || want_model);
    BackboneGraph g(*this, tape, want_model);
    std::optional<ad::Var> p;
    if (prompt != nullptr) p = tape.leaf(prompt->matrix, want_prompt);
    const auto target = vocab_.encode(batch[b].target);
    const ad::Var memory = g.encode(p, vocab_.encode(batch[b].source));
    const ad::Var logits = g.logits(g.decode_hidden(memory, with_bos(target)));
    const ad::Var nll = tape.cross_entropy(logits, with_eos(target));
    const double loss = tape.value(nll)(0, 0);
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::numeric, "non-finite loss at batch index " + std::to_string(b));
    }
    total += loss;
    tape.backward(nll);
    if (p && want_prompt) {
      const Matrix& gp = tape.grad(*p);
      if (!gp.empty()) {
        for (std::size_t i = 0; i < gp.size(); ++i) out.prompt.data()[i] += scale * gp.data()[i];
      }
    }
    if (want_model) {
      for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!trainable_[i]) continue;
        const Matrix& gi = tape.grad(g.param(i));
        if (gi.empty()) continue;
        for (std::size_t k = 0; k < gi.size(); ++k) out.model[i].data()[k] += scale * gi.data()[k];
      }
    }
  }
  out.mean_nll = total * scale;
  return out;
}

Matrix Backbone::encode_ids(const SoftPrompt* prompt, const std::vector<int>& ids) const {
  check_prompt(prompt);
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "cannot encode an empty text");
  ad::Tape tape(false);
  BackboneGraph g(*this, tape, false);
  std::optional<ad::Var> p;
  if (prompt != nullptr) p = tape.leaf(prompt->matrix, false);
  return tape.value(g.encode(p, ids));
}

Matrix Backbone::encoder_states(const SoftPrompt* prompt, const TokenSeq& text) const {
  return encode_ids(prompt, vocab_.encode(text));
}

ContentVector Backbone::encode_content(const TokenSeq& text) const {
  return ContentVector{encoder_states(nullptr, text).row_mean()};
}

std::vector<double> Backbone::next_token_logprobs(const Matrix& memory,
                                                  const std::vector<int>& prefix) const {
  ad::Tape tape(false);
  BackboneGraph g(*this, tape, false);
  const ad::Var mem = tape.leaf(memory, false);
  const Matrix& hidden = tape.value(g.decode_hidden(mem, prefix));
  const auto last = hidden.row(hidden.rows() - 1);
  const Matrix& emb = params_[tok_emb_];
  std::vector<double> z(emb.rows());
  for (std::size_t v = 0; v < emb.rows(); ++v) z[v] = dot(last, emb.row(v)) + params_[out_bias_](0, v);
  return log_softmax(z);
}

double train_step(Backbone& model, SoftPrompt* prompt, std::span<const StyledPair> batch, double lr,
                  UpdateSet update) {
  if (!(lr >= 0.0)) throw Error(ErrorKind::invalid_argument, "learning rate must be >= 0");
  const bool step_prompt = update != UpdateSet::model_only && prompt != nullptr;
  const bool step_model = update != UpdateSet::prompt_only;
  LossGradients g = model.gradients(prompt, batch, step_prompt && lr > 0.0, step_model && lr > 0.0);
  if (lr == 0.0) return g.mean_nll;
  if (step_prompt) {
    auto& pm = prompt->matrix;
    for (std::size_t i = 0; i < pm.size(); ++i) pm.data()[i] -= lr * g.prompt.data()[i];
  }
  if (step_model) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!model.trainable(i) || g.model[i].empty()) continue;
      for (std::size_t k = 0; k < params[i].size(); ++k) params[i].data()[k] -= lr * g.model[i].data()[k];
    }
  }
  return g.mean_nll;
}

// ---------------------------------------------------------------- decoding

namespace {

struct Hyp {
  std::vector<int> ids;  // starts with <bos>
  double score = 0.0;
};

// Higher score first; lexicographically smaller ids on exact ties.
bool ranks_before(const Hyp& a, const Hyp& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ids < b.ids;
}

bool allowed(int token) { return token != Vocabulary::kPad && token != Vocabulary::kBos; }

DecodeResult to_result(const Backbone& model, const Hyp& h, bool finished) {
  DecodeResult r;
  r.ids.assign(h.ids.begin() + 1, h.ids.end());
  if (finished && !r.ids.empty() && r.ids.back() == Vocabulary::kEos) r.ids.pop_back();
  r.tokens = model.vocab().decode(r.ids);
  r.logprob = h.score;
  r.finished = finished;
  return r;
}

}  // namespace

DecodeResult beam_decode(const Backbone& model, const SoftPrompt* prompt, const TokenSeq& source,
                         const BeamOptions& options) {
  if (options.beam_width == 0) throw Error(ErrorKind::invalid_argument, "beam_width must be >= 1");
  if (options.max_len == 0) throw Error(ErrorKind::invalid_argument, "max_len must be >= 1");
  const Matrix memory = model.encode_ids(prompt, model.vocab().encode(source));
  auto final_score = [&](const Hyp& h) {
    if (options.length_penalty <= 0.0) return h.score;
    const double len = static_cast<double>(h.ids.size() - 1);
    return h.score / std::pow(len, options.length_penalty);
  };

  std::vector<Hyp> live{Hyp{{Vocabulary::kBos}, 0.0}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < options.max_len && !live.empty(); ++step) {
    std::vector<Hyp> candidates;
    for (const Hyp& h : live) {
      const auto lp = model.next_token_logprobs(memory, h.ids);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (!allowed(static_cast<int>(t))) continue;
        Hyp c{h.ids, h.score + lp[t]};
        c.ids.push_back(static_cast<int>(t));
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(options.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), ranks_before);
    candidates.resize(keep);
    live.clear();
    for (auto& c : candidates) {
      (c.ids.back() == Vocabulary::kEos ? finished : live).push_back(std::move(c));
    }
    // Log-probabilities only decrease, so no live hypothesis can overtake a
    // finished one that already scores at least as high.
    if (options.length_penalty <= 0.0 && !finished.empty() && !live.empty()) {
      const auto best = std::min_element(finished.begin(), finished.end(), ranks_before);
      if (best->score >= live.front().score) break;
    }
  }
  if (!finished.empty()) {
    const auto best = std::max_element(finished.begin(), finished.end(), [&](const Hyp& a, const Hyp& b) {
      const double sa = final_score(a), sb = final_score(b);
      if (sa != sb) return sa < sb;
      return b.ids < a.ids;
    });
    return to_result(model, *best, true);
  }
  return to_result(model, live.front(), false);
}

DecodeResult greedy_decode(const Backbone& model, const SoftPrompt* prompt, const TokenSeq& source,
                           std::size_t max_len) {
  const Matrix memory = model.encode_ids(prompt, model.vocab().encode(source));
  Hyp h{{Vocabulary::kBos}, 0.0};
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = model.next_token_logprobs(memory, h.ids);
    int best = -1;
    for (std::size_t t = 0; t < lp.size(); ++t) {
      if (!allowed(static_cast<int>(t))) continue;
      if (best < 0 || lp[t] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(t);
    }
    h.ids.push_back(best);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == Vocabulary::kEos) return to_result(model, h, true);
  }
  return to_result(model, h, false);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "SETTPCKP";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"d_model", c.d_model}, {"heads", c.heads},         {"layers", c.layers},
          {"ffn_width", c.ffn_width}, {"max_positions", c.max_positions}, {"seed", c.seed}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig cfg;
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.ffn_width = j.value("ffn_width", cfg.ffn_width);
  cfg.max_positions = j.value("max_positions", cfg.max_positions);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

void save_checkpoint(const Backbone& model, const std::filesystem::path& path,
                     const std::string& config_hash) {
  nlohmann::json header;
  header["kind"] = "backbone";
  header["config"] = to_json(model.config());
  header["config_hash"] = config_hash;
  header["vocab"] = model.vocab().tokens();
  header["names"] = model.parameter_names();
  header["trainable"] = model.trainable_mask();
  header["digest"] = model.digest();
  std::vector<const Matrix*> tensors;
  for (const auto& p : model.parameters()) tensors.push_back(&p);
  write_container(path, kCheckpointMagic, kCheckpointVersion, std::move(header), tensors);
}

Backbone load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic, kCheckpointVersion);
  BackboneConfig cfg;
  try {
    cfg = backbone_config_from_json(c.header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": bad checkpoint config (" + e.what() + ")");
  }
  std::vector<std::string> tokens = c.header.at("vocab");
  Vocabulary vocab;
  for (std::size_t i = Vocabulary::kNumSpecials; i < tokens.size(); ++i) vocab.add(tokens[i]);
  Backbone model(std::move(vocab), cfg);
  const std::vector<std::string> names = c.header.at("names");
  if (names != model.names_ || c.tensors.size() != model.params_.size()) {
    throw Error(ErrorKind::format, path.string() + ": parameter layout mismatch");
  }
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    if (!c.tensors[i].same_shape(model.params_[i])) {
      throw Error(ErrorKind::format, path.string() + ": shape mismatch for " + names[i]);
    }
    model.params_[i] = std::move(c.tensors[i]);
  }
  const std::vector<bool> mask = c.header.at("trainable");
  model.trainable_ = mask;
  if (c.header.contains("digest") && c.header["digest"] != model.digest()) {
    throw Error(ErrorKind::format, path.string() + ": digest mismatch (corrupt checkpoint)");
  }
  return model;
}

std::string checkpoint_config_hash(const std::filesystem::path& path) {
  return read_container(path, kCheckpointMagic, kCheckpointVersion, true).header.value("config_hash", "");
}

}  // namespace settp
