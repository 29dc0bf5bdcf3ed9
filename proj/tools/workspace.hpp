#pragma once

// Workspace directory layout and artifact manifest used by the command-line tool.
//
//   config.json                      run configuration (copied in by gen-data)
//   manifest.json                    artifact -> producer, config hash, sha256
//   data/<task>.jsonl                gen-data
//   source/backbone.ckpt             pretrain-source
//   source/{style,instance,flat}.pool, source/clusters/<task>.jsonl   build-pools
//   runs/<variant>/f<fraction>/s<seed>/...   transfer, train-target, infer, evaluate
//   reports/...                      ablate, sweep

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "settp/config.hpp"
#include "settp/experiment.hpp"

namespace settp::cli {

struct RunKey {
  Variant variant = Variant::full;
  double fraction = 0.01;
  std::uint64_t seed = 0;
  /// Overrides the configured lambda when set.
  std::optional<double> lambda;

  std::string dir() const;
};

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }

  bool has_config() const;
  const WorkspaceConfig& config() const;
  void install_config(const WorkspaceConfig& cfg);

  /// Throws missing_artifact naming `producer` when the file is absent, or
  /// when it was produced under a different configuration.
  std::filesystem::path require(const std::string& rel, const std::string& producer) const;
  /// Hashes the file and records it in the manifest.
  void record(const std::string& rel, const std::string& producer);

  SuiteData suite() const;
  SourceArtifacts source_artifacts() const;

 private:
  nlohmann::json load_manifest() const;

  std::filesystem::path root_;
  mutable std::optional<WorkspaceConfig> config_;
};

std::string file_sha256(const std::filesystem::path& path);

}  // namespace settp::cli
