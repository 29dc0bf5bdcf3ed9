#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace settp {

using TokenSeq = std::vector<std::string>;

/// Closed vocabulary. Indices 0..3 are always <pad>, <bos>, <eos>, <unk>.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  Vocabulary();
  /// Specials followed by `tokens` (duplicates and specials skipped).
  explicit Vocabulary(const std::vector<std::string>& tokens);

  int add(const std::string& token);
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const TokenSeq& text) const;
  /// Stops at the first <eos>; drops <bos> and <pad>.
  TokenSeq decode(const std::vector<int>& ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct StyledPair {
  TokenSeq source;
  TokenSeq target;

  friend bool operator==(const StyledPair&, const StyledPair&) = default;
};

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct StyleCorpus {
  std::string task_id;
  std::string style_attribute;
  Split split = Split::train;
  std::vector<StyledPair> pairs;
  Vocabulary vocab;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
};

/// The three splits of one directed style-transfer task.
struct TaskData {
  StyleCorpus train;
  StyleCorpus validation;
  StyleCorpus test;

  std::size_t total() const { return train.size() + validation.size() + test.size(); }
};

enum class Transform {
  uppercase_markers,
  token_substitution,
  suffix_tagging,
  word_reversal,
  politeness_particles,
};

std::string_view to_string(Transform t);
Transform parse_transform(std::string_view text);

struct SyntheticStyleSpec {
  std::string name;
  Transform transform = Transform::token_substitution;
  /// Number of content nouns, split across two lexically disjoint topics.
  int vocab_size = 16;
  std::uint64_t seed = 0;
  std::size_t max_seq_len = 16;
  /// suffix_tagging: appended token.
  std::string tag = "<F>";
  /// politeness_particles: token inserted after the opener.
  std::string particle = "please";
  /// token_substitution: replacement map; empty means the built-in antonyms.
  std::vector<std::pair<std::string, std::string>> substitutions;
};

/// Full vocabulary shared by every synthetic task with this content size.
Vocabulary synthetic_vocabulary(int vocab_size);

/// Topic (0 or 1) of a synthetic sentence, read off its nouns; nullopt if none.
std::optional<int> synthetic_topic(const TokenSeq& text, int vocab_size);

/// Applies the spec's transform to one sentence.
TokenSeq apply_transform(const SyntheticStyleSpec& spec, const TokenSeq& source);

/// Deterministic task generator. Every target equals the transform of its source.
StyleCorpus generate_synthetic_task(const SyntheticStyleSpec& spec, std::size_t n_pairs);

/// Exact style checker for a synthetic transform; looks at the text alone.
class StyleOracle {
 public:
  explicit StyleOracle(SyntheticStyleSpec spec);
  bool accepts(const TokenSeq& text) const;
  const SyntheticStyleSpec& spec() const { return spec_; }

 private:
  SyntheticStyleSpec spec_;
  std::vector<std::string> from_;
  std::vector<std::string> to_;
};

/// In-order 80/10/10 split (rounded down for validation and test).
TaskData split_corpus(const StyleCorpus& corpus);

/// Reads a JSONL corpus. Lines carry "source", "target" and optionally "split";
/// without any split field the records are split 80/10/10 in file order.
/// Errors name the 1-based line number.
TaskData load_jsonl(const std::filesystem::path& path, const std::string& style_attribute = "");

/// Writes one record per pair in load order: train, validation, test.
void save_jsonl(const TaskData& data, const std::filesystem::path& path);
void save_jsonl(const StyleCorpus& corpus, const std::filesystem::path& path);

/// Uniform sample without replacement of floor(fraction * |corpus|) pairs;
/// chosen pairs keep their original relative order.
StyleCorpus sample_few_shot(const StyleCorpus& corpus, double fraction, std::uint64_t seed);
/// The sorted indices sample_few_shot selects.
std::vector<std::size_t> few_shot_indices(std::size_t n, double fraction, std::uint64_t seed);

TokenSeq tokenize(std::string_view text);
std::string detokenize(const TokenSeq& tokens);

}  // namespace settp
