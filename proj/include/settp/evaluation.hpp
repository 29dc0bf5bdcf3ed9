#pragma once

// Content consistency (self-BLEU), style accuracy through a judge, and the
// per-run metrics report.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/corpus.hpp"

namespace settp {

struct BleuStats {
  double score = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

/// Corpus BLEU-4 with uniform weights over pre-tokenized text. Orders 2-4 get
/// add-one smoothing (one extra match and one extra n-gram).
BleuStats corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);

/// Self-BLEU of outputs against their inputs.
double content_consistency(const std::vector<TokenSeq>& outputs, const std::vector<TokenSeq>& inputs);

class StyleJudge {
 public:
  virtual ~StyleJudge() = default;
  /// One verdict per sentence; nullopt marks an item the judge could not decide.
  virtual std::vector<std::optional<bool>> judge(const std::vector<TokenSeq>& sentences) const = 0;
  virtual std::string name() const = 0;
};

class OracleJudge : public StyleJudge {
 public:
  explicit OracleJudge(SyntheticStyleSpec spec) : oracle_(std::move(spec)) {}
  std::vector<std::optional<bool>> judge(const std::vector<TokenSeq>& sentences) const override;
  std::string name() const override { return "oracle"; }

 private:
  StyleOracle oracle_;
};

/// External classifier: receives one sentence per line on standard input and
/// must print one line of 0 or 1 per sentence.
class ProcessJudge : public StyleJudge {
 public:
  explicit ProcessJudge(std::string command) : command_(std::move(command)) {}
  std::vector<std::optional<bool>> judge(const std::vector<TokenSeq>& sentences) const override;
  std::string name() const override { return "process:" + command_; }

 private:
  std::string command_;
};

struct AccuracyResult {
  double acc = 0.0;  // [0, 100]
  std::size_t accepted = 0;
  std::size_t invalid = 0;
  std::size_t n = 0;
};

/// Percentage of outputs the judge accepts; undecided items count as rejected
/// and are reported in `invalid`.
AccuracyResult style_accuracy(const std::vector<TokenSeq>& outputs, const StyleJudge& judge);

struct MetricsReport {
  double cc = 0.0;
  double acc = 0.0;
  double g = 0.0;
  std::size_t n_items = 0;
  std::size_t invalid_items = 0;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  std::string protocol;
  std::string variant;
  double fraction = 1.0;
  /// Aggregates only: mean of the per-run g values.
  std::optional<double> g_run_mean;

  /// g = sqrt(cc * acc).
  static MetricsReport from_scores(double cc, double acc);
  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Throws a format error naming the first violated field.
void validate_metrics_report(const nlohmann::json& j);

/// Mean cc and acc over runs with g = sqrt(cc * acc); seeds concatenated,
/// item counts summed.
MetricsReport average_reports(const std::vector<MetricsReport>& runs);

}  // namespace settp
