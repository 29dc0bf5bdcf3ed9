#pragma once

// Style-level and instance-level prompt pools.
//
// The style pool maps a task id to (prompt, key); the key is a trainable
// d-vector initialized from the prompt's row mean. The instance pool maps
// (task id, cluster index) to (prompt, content centroid) and is searched by
// L2 distance at inference time.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "settp/backbone.hpp"
#include "settp/soft_prompt.hpp"

namespace settp {

/// m x e prompt with N(0, 0.02^2) entries, deterministic per seed.
SoftPrompt init_prompt(std::size_t m, std::size_t e, std::uint64_t seed, std::string prompt_id = "");

/// Row mean of the prompt matrix: the initial retrieval key.
std::vector<double> key_from_prompt(const SoftPrompt& prompt);

struct StyleEntry {
  SoftPrompt prompt;
  std::vector<double> key;

  friend bool operator==(const StyleEntry&, const StyleEntry&) = default;
};

struct InstanceEntry {
  SoftPrompt prompt;
  ContentVector centroid;
  std::size_t cluster_index = 0;

  friend bool operator==(const InstanceEntry&, const InstanceEntry&) = default;
};

struct PoolDims {
  std::size_t m = 0;
  std::size_t e = 0;
  std::size_t d = 0;

  friend bool operator==(const PoolDims&, const PoolDims&) = default;
};

class StylePromptPool {
 public:
  StylePromptPool() = default;
  explicit StylePromptPool(PoolDims dims, std::string config_hash = "");

  const PoolDims& dims() const { return dims_; }
  const std::string& config_hash() const { return config_hash_; }

  void add(const std::string& task_id, StyleEntry entry);
  void remove(const std::string& task_id);
  bool contains(const std::string& task_id) const { return entries_.count(task_id) != 0; }
  const StyleEntry& at(const std::string& task_id) const;
  StyleEntry& at(const std::string& task_id);
  std::vector<std::string> task_ids() const;
  std::size_t size() const { return entries_.size(); }

  std::string entry_digest(const std::string& task_id) const;
  std::string digest() const;

 private:
  PoolDims dims_;
  std::string config_hash_;
  std::map<std::string, StyleEntry> entries_;
};

class InstancePromptPool {
 public:
  InstancePromptPool() = default;
  explicit InstancePromptPool(PoolDims dims, std::string config_hash = "");

  const PoolDims& dims() const { return dims_; }
  const std::string& config_hash() const { return config_hash_; }

  void add(const std::string& task_id, InstanceEntry entry);
  void remove_task(const std::string& task_id);
  bool has_task(const std::string& task_id) const;
  /// Entries of one task ordered by cluster index.
  std::vector<const InstanceEntry*> entries_for(const std::string& task_id) const;
  std::vector<std::string> task_ids() const;
  std::size_t size() const { return entries_.size(); }

  std::string digest() const;

 private:
  friend void save_pool(const InstancePromptPool&, const std::filesystem::path&);

  PoolDims dims_;
  std::string config_hash_;
  std::map<std::pair<std::string, std::size_t>, InstanceEntry> entries_;
};

/// Entry of `task_id` whose centroid is L2-nearest to `query`; lowest cluster
/// index on ties. Unknown task -> not_found error.
const InstanceEntry& nearest_instance(const InstancePromptPool& pool, const ContentVector& query,
                                      const std::string& task_id);

/// Same search across every task; returns (task id, entry).
std::pair<std::string, const InstanceEntry*> nearest_instance_any_task(const InstancePromptPool& pool,
                                                                       const ContentVector& query);

void save_pool(const StylePromptPool& pool, const std::filesystem::path& path);
void save_pool(const InstancePromptPool& pool, const std::filesystem::path& path);
/// expected_e == 0 skips the workspace dimension check.
StylePromptPool load_style_pool(const std::filesystem::path& path, std::size_t expected_e = 0);
InstancePromptPool load_instance_pool(const std::filesystem::path& path, std::size_t expected_e = 0);

/// Single prompt file (e.g. an interpolated target prompt) with a JSON note.
void save_prompt(const SoftPrompt& prompt, const std::filesystem::path& path, const nlohmann::json& note = {});
SoftPrompt load_prompt(const std::filesystem::path& path, std::size_t expected_e = 0, nlohmann::json* note = nullptr);

}  // namespace settp
