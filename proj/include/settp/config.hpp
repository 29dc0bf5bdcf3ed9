#pragma once

// Workspace configuration: the synthetic suite, backbone and prompt dims,
// the training recipes of every stage, transfer and inference settings, and
// the few-shot protocol. Stored as versioned JSON; its hash is embedded in
// every artifact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"
#include "settp/training.hpp"
#include "settp/transfer.hpp"

namespace settp {

inline constexpr int kConfigSchemaVersion = 1;

struct TaskConfig {
  SyntheticStyleSpec spec;
  std::size_t pairs = 500;
};

struct ClusterPolicy {
  /// 0 means auto: max(2, floor(sqrt(n / 10))), capped at n.
  std::size_t fixed = 0;

  std::size_t clusters_for(std::size_t n) const;
};

struct WorkspaceConfig {
  int vocab_size = 16;
  std::vector<TaskConfig> sources;
  TaskConfig target;
  /// Extra target pairs generated beyond the few-shot pool, split evenly into validation and test.
  std::size_t target_heldout = 200;

  BackboneConfig backbone;
  PretrainConfig pretrain;
  /// Prompt length; the key dimension d equals the embedding width e.
  std::size_t prompt_length = 20;

  TrainConfig source_prompt;
  TrainConfig target_prompt;
  TrainConfig target_model;
  KeyTrainingConfig keys;
  double lambda = 0.5;
  double theta_t = 0.8;
  double theta_e = 0.8;
  ClusterPolicy source_clusters;
  ClusterPolicy target_clusters;

  std::size_t beam_width = 4;
  std::size_t max_decode_len = 20;
  bool joint_conditioning = false;
  bool search_all_tasks = false;

  std::vector<double> fractions{0.01, 0.02, 0.05};
  std::size_t seeds = 5;

  /// Three sources (politeness, suffix tagging, substitution) and one target.
  static WorkspaceConfig defaults();

  std::size_t e() const { return backbone.d_model; }
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static WorkspaceConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

nlohmann::ordered_json to_json(const SyntheticStyleSpec& spec);
SyntheticStyleSpec spec_from_json(const nlohmann::json& j);

WorkspaceConfig load_config(const std::filesystem::path& path);
void save_config(const WorkspaceConfig& cfg, const std::filesystem::path& path);

}  // namespace settp
