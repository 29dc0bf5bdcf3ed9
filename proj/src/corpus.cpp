#include "settp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "settp/error.hpp"

namespace settp {

namespace {

constexpr const char* kSpecials[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

const std::vector<std::string> kOpeners = {"the", "a"};
const std::vector<std::string> kClosers = {".", "!"};
const std::vector<std::string> kStyleTokens = {"<F>", "<G>", "please", "kindly"};
const std::vector<std::string> kPositive = {"good", "great", "nice", "fresh",
                                            "tasty", "clean", "warm", "happy"};
const std::vector<std::string> kNegative = {"bad", "awful", "poor", "stale",
                                            "bland", "dirty", "cold", "sad"};
const std::vector<std::string> kTopicWords[2] = {
    {"pizza", "pasta", "soup", "bread", "salad", "coffee", "tea", "cake", "rice", "fish",
     "burger", "noodles", "cheese", "fruit", "pie", "steak"},
    {"train", "hotel", "beach", "flight", "city", "room", "museum", "airport", "bus", "park",
     "river", "road", "ticket", "castle", "island", "tour"},
};

std::string upper(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

std::vector<std::string> topic_nouns(int vocab_size, int topic) {
  const int count = topic == 0 ? (vocab_size + 1) / 2 : vocab_size / 2;
  const auto& base = kTopicWords[topic];
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) {
    if (static_cast<std::size_t>(i) < base.size()) {
      out.push_back(base[static_cast<std::size_t>(i)]);
    } else {
      out.push_back(base[static_cast<std::size_t>(i) % base.size()] + std::to_string(i));
    }
  }
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void validate(const SyntheticStyleSpec& spec) {
  if (spec.vocab_size < 8) {
    throw Error(ErrorKind::invalid_argument,
                "synthetic spec '" + spec.name + "': vocab_size must be >= 8");
  }
  if (spec.max_seq_len < 8) {
    throw Error(ErrorKind::invalid_argument, "synthetic spec: max_seq_len must be >= 8");
  }
}

std::vector<std::pair<std::string, std::string>> substitution_map(const SyntheticStyleSpec& spec) {
  if (!spec.substitutions.empty()) return spec.substitutions;
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < kPositive.size(); ++i) out.emplace_back(kPositive[i], kNegative[i]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) add(s);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const TokenSeq& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (const auto& t : text) out.push_back(id(t));
  return out;
}

TokenSeq Vocabulary::decode(const std::vector<int>& ids) const {
  TokenSeq out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    out.push_back(token(i));
  }
  return out;
}

// ---------------------------------------------------------------- enums

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "validation" || text == "valid" || text == "dev") return Split::validation;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::parse, "unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::uppercase_markers: return "uppercase_markers";
    case Transform::token_substitution: return "token_substitution";
    case Transform::suffix_tagging: return "suffix_tagging";
    case Transform::word_reversal: return "word_reversal";
    case Transform::politeness_particles: return "politeness_particles";
  }
  return "token_substitution";
}

Transform parse_transform(std::string_view text) {
  for (Transform t : {Transform::uppercase_markers, Transform::token_substitution,
                      Transform::suffix_tagging, Transform::word_reversal,
                      Transform::politeness_particles}) {
    if (to_string(t) == text) return t;
  }
  throw Error(ErrorKind::parse, "unknown transform '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- synthetic

Vocabulary synthetic_vocabulary(int vocab_size) {
  if (vocab_size < 8) throw Error(ErrorKind::invalid_argument, "vocab_size must be >= 8");
  Vocabulary v;
  for (const auto& t : kOpeners) v.add(t);
  for (const auto& t : kClosers) v.add(t);
  for (const auto& t : kStyleTokens) v.add(t);
  for (const auto& t : kPositive) v.add(t);
  for (const auto& t : kNegative) v.add(t);
  for (const auto& t : kPositive) v.add(upper(t));
  for (int topic = 0; topic < 2; ++topic) {
    for (const auto& t : topic_nouns(vocab_size, topic)) v.add(t);
  }
  return v;
}

std::optional<int> synthetic_topic(const TokenSeq& text, int vocab_size) {
  for (int topic = 0; topic < 2; ++topic) {
    const auto nouns = topic_nouns(vocab_size, topic);
    for (const auto& t : text) {
      if (contains(nouns, t)) return topic;
    }
  }
  return std::nullopt;
}

TokenSeq apply_transform(const SyntheticStyleSpec& spec, const TokenSeq& source) {
  TokenSeq out = source;
  switch (spec.transform) {
    case Transform::uppercase_markers:
      for (auto& t : out) {
        if (contains(kPositive, t)) t = upper(t);
      }
      break;
    case Transform::token_substitution: {
      const auto map = substitution_map(spec);
      for (auto& t : out) {
        auto it = std::find_if(map.begin(), map.end(), [&](const auto& p) { return p.first == t; });
        if (it != map.end()) t = it->second;
      }
      break;
    }
    case Transform::suffix_tagging:
      out.push_back(spec.tag);
      break;
    case Transform::word_reversal:
      std::reverse(out.begin(), out.end());
      break;
    case Transform::politeness_particles:
      out.insert(out.begin() + (out.empty() ? 0 : 1), spec.particle);
      break;
  }
  return out;
}

StyleCorpus generate_synthetic_task(const SyntheticStyleSpec& spec, std::size_t n_pairs) {
  validate(spec);
  if (n_pairs == 0) throw Error(ErrorKind::invalid_argument, "n_pairs must be >= 1");
  std::mt19937_64 rng(spec.seed);
  auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };

  // Adjectives the transform is guaranteed to act on.
  std::vector<std::string> marked = kPositive;
  if (spec.transform == Transform::token_substitution) {
    marked.clear();
    for (const auto& [from, to] : substitution_map(spec)) {
      if (contains(kPositive, from)) marked.push_back(from);
    }
    if (marked.empty()) {
      throw Error(ErrorKind::invalid_argument, "token_substitution map touches no adjective");
    }
  }

  StyleCorpus corpus;
  corpus.task_id = spec.name;
  corpus.style_attribute = std::string(to_string(spec.transform));
  corpus.split = Split::train;
  corpus.vocab = synthetic_vocabulary(spec.vocab_size);
  corpus.pairs.reserve(n_pairs);
  const std::vector<std::string> nouns[2] = {topic_nouns(spec.vocab_size, 0),
                                            topic_nouns(spec.vocab_size, 1)};
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const int topic = static_cast<int>(rng() % 2);
    const std::size_t body = 3 + rng() % 2;
    // body[0] is a marked adjective, body[1..2] nouns, the rest mixed.
    TokenSeq words;
    words.push_back(pick(marked));
    words.push_back(pick(nouns[topic]));
    words.push_back(pick(nouns[topic]));
    for (std::size_t k = 3; k < body; ++k) {
      words.push_back(rng() % 2 == 0 ? pick(kPositive) : pick(nouns[topic]));
    }
    std::shuffle(words.begin(), words.end(), rng);
    TokenSeq source;
    source.push_back(pick(kOpeners));
    source.insert(source.end(), words.begin(), words.end());
    source.push_back(pick(kClosers));
    TokenSeq target = apply_transform(spec, source);
    if (target.size() > spec.max_seq_len || source.size() > spec.max_seq_len) {
      throw Error(ErrorKind::invalid_argument, "generated sentence exceeds max_seq_len");
    }
    corpus.pairs.push_back({std::move(source), std::move(target)});
  }
  return corpus;
}

StyleOracle::StyleOracle(SyntheticStyleSpec spec) : spec_(std::move(spec)) {
  if (spec_.transform == Transform::token_substitution) {
    for (const auto& [from, to] : substitution_map(spec_)) {
      from_.push_back(from);
      to_.push_back(to);
    }
  } else if (spec_.transform == Transform::uppercase_markers) {
    from_ = kPositive;
    for (const auto& t : kPositive) to_.push_back(upper(t));
  }
}

bool StyleOracle::accepts(const TokenSeq& text) const {
  switch (spec_.transform) {
    case Transform::uppercase_markers:
    case Transform::token_substitution: {
      bool any_to = false;
      for (const auto& t : text) {
        if (contains(from_, t)) return false;
        any_to = any_to || contains(to_, t);
      }
      return any_to;
    }
    case Transform::suffix_tagging:
      return text.size() >= 2 && text.back() == spec_.tag &&
             std::count(text.begin(), text.end(), spec_.tag) == 1;
    case Transform::word_reversal:
      return text.size() >= 2 && contains(kClosers, text.front()) && contains(kOpeners, text.back());
    case Transform::politeness_particles:
      return text.size() >= 3 && contains(kOpeners, text[0]) && text[1] == spec_.particle;
  }
  return false;
}

// ---------------------------------------------------------------- splits and I/O

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string detokenize(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

TaskData split_corpus(const StyleCorpus& corpus) {
  const std::size_t n = corpus.size();
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;
  TaskData out;
  for (StyleCorpus* c : {&out.train, &out.validation, &out.test}) {
    c->task_id = corpus.task_id;
    c->style_attribute = corpus.style_attribute;
    c->vocab = corpus.vocab;
  }
  out.train.split = Split::train;
  out.validation.split = Split::validation;
  out.test.split = Split::test;
  const auto begin = corpus.pairs.begin();
  out.train.pairs.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  out.validation.pairs.assign(begin + static_cast<std::ptrdiff_t>(n_train),
                              begin + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.pairs.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_val), corpus.pairs.end());
  return out;
}

TaskData load_jsonl(const std::filesystem::path& path, const std::string& style_attribute) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open corpus file " + path.string());

  struct Record {
    StyledPair pair;
    std::optional<Split> split;
  };
  std::vector<Record> records;
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  bool any_split = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::parse, where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw Error(ErrorKind::parse, where + ": record is not an object");
    for (const char* key : {"source", "target"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw Error(ErrorKind::parse, where + ": missing string field '" + key + "'");
      }
    }
    Record rec;
    rec.pair.source = tokenize(j["source"].get<std::string>());
    rec.pair.target = tokenize(j["target"].get<std::string>());
    if (rec.pair.source.empty() || rec.pair.target.empty()) {
      throw Error(ErrorKind::parse, where + ": empty source or target");
    }
    if (j.contains("split")) {
      if (!j["split"].is_string()) throw Error(ErrorKind::parse, where + ": split must be a string");
      try {
        rec.split = parse_split(j["split"].get<std::string>());
      } catch (const Error& e) {
        throw Error(ErrorKind::parse, where + ": " + e.what());
      }
      any_split = true;
    }
    for (const auto& t : rec.pair.source) vocab.add(t);
    for (const auto& t : rec.pair.target) vocab.add(t);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error(ErrorKind::parse, path.string() + ": empty corpus file");

  StyleCorpus all;
  all.task_id = path.stem().string();
  all.style_attribute = style_attribute;
  all.vocab = vocab;
  if (!any_split) {
    for (auto& r : records) all.pairs.push_back(std::move(r.pair));
    return split_corpus(all);
  }
  TaskData out;
  for (StyleCorpus* c : {&out.train, &out.validation, &out.test}) {
    c->task_id = all.task_id;
    c->style_attribute = style_attribute;
    c->vocab = vocab;
  }
  out.train.split = Split::train;
  out.validation.split = Split::validation;
  out.test.split = Split::test;
  for (auto& r : records) {
    switch (r.split.value_or(Split::train)) {
      case Split::train: out.train.pairs.push_back(std::move(r.pair)); break;
      case Split::validation: out.validation.pairs.push_back(std::move(r.pair)); break;
      case Split::test: out.test.pairs.push_back(std::move(r.pair)); break;
    }
  }
  return out;
}

namespace {

void write_records(std::ostream& out, const StyleCorpus& corpus) {
  for (const auto& p : corpus.pairs) {
    nlohmann::ordered_json j;
    j["source"] = detokenize(p.source);
    j["target"] = detokenize(p.target);
    j["split"] = std::string(to_string(corpus.split));
    out << j.dump() << '\n';
  }
}

}  // namespace

void save_jsonl(const TaskData& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_records(out, data.train);
  write_records(out, data.validation);
  write_records(out, data.test);
}

void save_jsonl(const StyleCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_records(out, corpus);
}

std::vector<std::size_t> few_shot_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "few-shot fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (k == 0) {
    throw Error(ErrorKind::invalid_argument,
                "few-shot fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                    " pairs selects nothing");
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

StyleCorpus sample_few_shot(const StyleCorpus& corpus, double fraction, std::uint64_t seed) {
  StyleCorpus out = corpus;
  out.pairs.clear();
  for (std::size_t i : few_shot_indices(corpus.size(), fraction, seed)) {
    out.pairs.push_back(corpus.pairs[i]);
  }
  return out;
}

}  // namespace settp
