#pragma once

// End-to-end orchestration: suite generation, source stage (backbone, style
// and instance pools), target transfer and tuning, inference, and metrics
// under the full method, the target-only prompt-tuning baseline, and the five
// ablations.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "settp/backbone.hpp"
#include "settp/clustering.hpp"
#include "settp/config.hpp"
#include "settp/evaluation.hpp"
#include "settp/inference.hpp"
#include "settp/prompt_store.hpp"
#include "settp/transfer.hpp"

namespace settp {

enum class Variant { full, baseline, wo_aar, wo_style, wo_dt, wo_pi, wo_cluster };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);
/// The five ablations in reporting order.
const std::vector<Variant>& ablation_variants();

/// Components of the full pipeline. Every ablation switches off exactly one.
struct PipelineSwitches {
  bool aar = true;      // source prompts interpolated into the target prompt
  bool style = true;    // a target style prompt exists at all
  bool dt = true;       // domain temperatures from vote counting (else uniform)
  bool pi = true;       // nearest-centroid instance prompt at inference (else random)
  bool cluster = true;  // content clustering (else one cluster per task)

  friend bool operator==(const PipelineSwitches&, const PipelineSwitches&) = default;
  nlohmann::ordered_json to_json() const;
};

/// Not defined for the baseline, which is a different pipeline.
PipelineSwitches switches_for(Variant v);
/// Names of the components that differ.
std::vector<std::string> switch_diff(const PipelineSwitches& a, const PipelineSwitches& b);

struct SuiteData {
  std::vector<TaskData> sources;
  /// train = the few-shot pool; validation and test are held out.
  TaskData target;
  SyntheticStyleSpec target_spec;
};

SuiteData generate_suite(const WorkspaceConfig& cfg);
/// All suite corpora share one vocabulary.
const Vocabulary& suite_vocabulary(const SuiteData& suite);
/// Writes <dir>/<task>.jsonl for every source and the target; returns the paths.
std::vector<std::filesystem::path> save_suite(const SuiteData& suite, const std::filesystem::path& dir);
/// Reads what save_suite wrote. Tokens outside the shared vocabulary are a format error.
SuiteData load_suite(const WorkspaceConfig& cfg, const std::filesystem::path& dir);

struct SourceArtifacts {
  Backbone model;
  StylePromptPool style_pool;
  InstancePromptPool instance_pool;
  /// One prompt per source task, for the clustering ablation.
  InstancePromptPool flat_pool;
  std::vector<ClusterAssignment> assignments;
  TrainLog backbone_log;
  std::vector<TrainLog> prompt_logs;
};

Backbone pretrain_source_model(const WorkspaceConfig& cfg, const SuiteData& suite, TrainLog* log = nullptr);
StylePromptPool train_style_pool(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& model,
                                 std::vector<TrainLog>* logs = nullptr);
/// flat == true trains a single prompt per task.
InstancePromptPool train_instance_pool(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& model,
                                       bool flat, std::vector<ClusterAssignment>* assignments = nullptr,
                                       std::vector<TrainLog>* logs = nullptr);
SourceArtifacts build_source_artifacts(const WorkspaceConfig& cfg, const SuiteData& suite);

struct TransferStage {
  StyleCorpus few_shot;
  /// P_T; absent without a style prompt.
  std::optional<SoftPrompt> target_prompt;
  /// P_T with source prompts mixed in (equal to P_T when lambda is 0).
  std::optional<SoftPrompt> interpolated;
  TransferReport report;
};

/// Samples the few-shot set, tunes P_T on the frozen source model, computes
/// domain temperatures, trains the keys, and interpolates.
TransferStage run_transfer(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src,
                           const PipelineSwitches& sw, double fraction, std::uint64_t seed);

struct TargetStage {
  Backbone model;
  InstancePromptPool pool;
  TrainLog model_log;
};

/// Tunes the model with the interpolated prompt frozen, then adapts one
/// instance prompt per target cluster (initialized from the interpolated
/// prompt) against the tuned model.
TargetStage run_target_training(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& source_model,
                                const TransferStage& transfer, const PipelineSwitches& sw, std::uint64_t seed);

/// Target-only prompt tuning on the frozen source model.
StyleEntry baseline_prompt(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& source_model,
                           const StyleCorpus& few_shot, std::uint64_t seed);
/// Single-entry pool holding the baseline prompt.
InstancePromptPool baseline_pool(const WorkspaceConfig& cfg, const std::string& task_id, const SoftPrompt& prompt);

InferenceOptions inference_options(const WorkspaceConfig& cfg, const PipelineSwitches& sw, std::uint64_t seed,
                                   const SoftPrompt* style_prefix);

MetricsReport score_outputs(const std::vector<InferenceResult>& outputs, const StyleJudge& judge);

struct TargetRun {
  MetricsReport report;
  TransferReport transfer;
  std::vector<InferenceResult> outputs;
};

/// One (variant, fraction, seed) run on the target test split.
TargetRun run_target(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src, Variant variant,
                     double fraction, std::uint64_t seed);

struct Protocol {
  enum class Kind { full, few_shot, ablation };
  Kind kind = Kind::full;
  double fraction = 1.0;
  std::size_t seeds = 1;
  Variant variant = Variant::full;
};

/// Mean report over seeds 0..seeds-1 (the full protocol is one run on the whole pool).
MetricsReport run_experiment(const Protocol& protocol, const WorkspaceConfig& cfg, const SuiteData& suite,
                             const SourceArtifacts& src);

struct SweepRow {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  MetricsReport report;
};

std::vector<SweepRow> run_sweep(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src,
                                const std::vector<double>& fractions, std::size_t seeds,
                                const std::vector<Variant>& variants);
/// Header: method,fraction,seed,cc,acc,g
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace settp
