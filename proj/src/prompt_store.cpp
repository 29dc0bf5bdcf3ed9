#include "settp/prompt_store.hpp"

#include <random>

#include "settp/container.hpp"
#include "settp/error.hpp"
#include "settp/kernels.hpp"

namespace settp {

namespace {

constexpr std::string_view kStyleMagic = "SETTPSTY";
constexpr std::string_view kInstanceMagic = "SETTPINS";
constexpr std::string_view kPromptMagic = "SETTPPRM";
constexpr std::uint32_t kPoolVersion = 1;

void check_prompt_dims(const PoolDims& dims, const SoftPrompt& p) {
  if (!p.matrix.all_finite()) throw Error(ErrorKind::numeric, "prompt has non-finite entries");
  if (p.length() == 0) throw Error(ErrorKind::invalid_argument, "stored prompts need m >= 1");
  if (p.length() != dims.m || p.width() != dims.e) {
    throw Error(ErrorKind::dimension_mismatch,
                "prompt is " + std::to_string(p.length()) + "x" + std::to_string(p.width()) +
                    ", pool expects " + std::to_string(dims.m) + "x" + std::to_string(dims.e));
  }
}

nlohmann::json dims_json(const PoolDims& d) { return {{"m", d.m}, {"e", d.e}, {"d", d.d}}; }

PoolDims read_dims(const nlohmann::json& h, const std::filesystem::path& path, std::size_t expected_e) {
  PoolDims d{h.at("m").get<std::size_t>(), h.at("e").get<std::size_t>(), h.at("d").get<std::size_t>()};
  if (expected_e != 0 && d.e != expected_e) {
    throw Error(ErrorKind::dimension_mismatch, path.string() + ": pool embedding dim " + std::to_string(d.e) +
                                                   " does not match workspace dim " + std::to_string(expected_e));
  }
  return d;
}

}  // namespace

SoftPrompt init_prompt(std::size_t m, std::size_t e, std::uint64_t seed, std::string prompt_id) {
  if (m == 0 || e == 0) throw Error(ErrorKind::invalid_argument, "prompt dims must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  SoftPrompt p{Matrix(m, e), std::move(prompt_id)};
  for (double& v : p.matrix.values()) v = dist(rng);
  return p;
}

std::vector<double> key_from_prompt(const SoftPrompt& prompt) { return prompt.matrix.row_mean(); }

// ---------------------------------------------------------------- style pool

StylePromptPool::StylePromptPool(PoolDims dims, std::string config_hash)
    : dims_(dims), config_hash_(std::move(config_hash)) {}

void StylePromptPool::add(const std::string& task_id, StyleEntry entry) {
  if (contains(task_id)) throw Error(ErrorKind::invalid_argument, "style pool already holds '" + task_id + "'");
  check_prompt_dims(dims_, entry.prompt);
  if (entry.key.size() != dims_.d) throw Error(ErrorKind::dimension_mismatch, "style key dimension != d");
  entries_.emplace(task_id, std::move(entry));
}

void StylePromptPool::remove(const std::string& task_id) {
  if (entries_.erase(task_id) == 0) throw Error(ErrorKind::not_found, "style pool has no '" + task_id + "'");
}

const StyleEntry& StylePromptPool::at(const std::string& task_id) const {
  auto it = entries_.find(task_id);
  if (it == entries_.end()) throw Error(ErrorKind::not_found, "style pool has no '" + task_id + "'");
  return it->second;
}

StyleEntry& StylePromptPool::at(const std::string& task_id) {
  return const_cast<StyleEntry&>(std::as_const(*this).at(task_id));
}

std::vector<std::string> StylePromptPool::task_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

std::string StylePromptPool::entry_digest(const std::string& task_id) const {
  const auto& e = at(task_id);
  Digest d;
  d.update(task_id).update(e.prompt.prompt_id).update(e.prompt.matrix).update(e.key);
  return d.hex();
}

std::string StylePromptPool::digest() const {
  Digest d;
  d.update(dims_json(dims_).dump()).update(config_hash_);
  for (const auto& [id, e] : entries_) d.update(entry_digest(id));
  return d.hex();
}

// ---------------------------------------------------------------- instance pool

InstancePromptPool::InstancePromptPool(PoolDims dims, std::string config_hash)
    : dims_(dims), config_hash_(std::move(config_hash)) {}

void InstancePromptPool::add(const std::string& task_id, InstanceEntry entry) {
  const auto key = std::make_pair(task_id, entry.cluster_index);
  if (entries_.count(key) != 0) {
    throw Error(ErrorKind::invalid_argument,
                "instance pool already holds '" + task_id + "' cluster " + std::to_string(entry.cluster_index));
  }
  check_prompt_dims(dims_, entry.prompt);
  if (entry.centroid.dim() != dims_.e) throw Error(ErrorKind::dimension_mismatch, "centroid dimension != e");
  entries_.emplace(key, std::move(entry));
}

void InstancePromptPool::remove_task(const std::string& task_id) {
  if (!has_task(task_id)) throw Error(ErrorKind::not_found, "instance pool has no '" + task_id + "'");
  for (auto it = entries_.begin(); it != entries_.end();) {
    it = it->first.first == task_id ? entries_.erase(it) : std::next(it);
  }
}

bool InstancePromptPool::has_task(const std::string& task_id) const {
  auto it = entries_.lower_bound({task_id, 0});
  return it != entries_.end() && it->first.first == task_id;
}

std::vector<const InstanceEntry*> InstancePromptPool::entries_for(const std::string& task_id) const {
  std::vector<const InstanceEntry*> out;
  for (auto it = entries_.lower_bound({task_id, 0}); it != entries_.end() && it->first.first == task_id; ++it) {
    out.push_back(&it->second);
  }
  return out;
}

std::vector<std::string> InstancePromptPool::task_ids() const {
  std::vector<std::string> out;
  for (const auto& [key, e] : entries_) {
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  }
  return out;
}

std::string InstancePromptPool::digest() const {
  Digest d;
  d.update(dims_json(dims_).dump()).update(config_hash_);
  for (const auto& [key, e] : entries_) {
    d.update(key.first).update(std::to_string(key.second)).update(e.prompt.prompt_id);
    d.update(e.prompt.matrix).update(e.centroid.values);
  }
  return d.hex();
}

const InstanceEntry& nearest_instance(const InstancePromptPool& pool, const ContentVector& query,
                                      const std::string& task_id) {
  const auto entries = pool.entries_for(task_id);
  if (entries.empty()) throw Error(ErrorKind::not_found, "instance pool has no entries for '" + task_id + "'");
  Matrix centroids(entries.size(), pool.dims().e);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& c = entries[i]->centroid.values;
    std::copy(c.begin(), c.end(), centroids.row(i).begin());
  }
  return *entries[kernels::nearest_row(centroids, query.values)];
}

std::pair<std::string, const InstanceEntry*> nearest_instance_any_task(const InstancePromptPool& pool,
                                                                       const ContentVector& query) {
  std::pair<std::string, const InstanceEntry*> best{"", nullptr};
  double best_d = 0.0;
  for (const auto& task : pool.task_ids()) {
    const InstanceEntry& e = nearest_instance(pool, query, task);
    const double d = squared_l2_distance(e.centroid.values, query.values);
    if (best.second == nullptr || d < best_d) {
      best = {task, &e};
      best_d = d;
    }
  }
  if (best.second == nullptr) throw Error(ErrorKind::not_found, "instance pool is empty");
  return best;
}

// ---------------------------------------------------------------- persistence

void save_pool(const StylePromptPool& pool, const std::filesystem::path& path) {
  nlohmann::json h = dims_json(pool.dims());
  h["kind"] = "style_pool";
  h["config_hash"] = pool.config_hash();
  h["entries"] = nlohmann::json::array();
  std::vector<Matrix> keys;
  std::vector<const Matrix*> tensors;
  const auto ids = pool.task_ids();
  keys.reserve(ids.size());
  for (const auto& id : ids) {
    const auto& e = pool.at(id);
    h["entries"].push_back({{"task_id", id}, {"prompt_id", e.prompt.prompt_id}});
    keys.push_back(Matrix::row_vector(e.key));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    tensors.push_back(&pool.at(ids[i]).prompt.matrix);
    tensors.push_back(&keys[i]);
  }
  write_container(path, kStyleMagic, kPoolVersion, std::move(h), tensors);
}

StylePromptPool load_style_pool(const std::filesystem::path& path, std::size_t expected_e) {
  Container c = read_container(path, kStyleMagic, kPoolVersion);
  try {
    StylePromptPool pool(read_dims(c.header, path, expected_e), c.header.at("config_hash").get<std::string>());
    const auto& entries = c.header.at("entries");
    if (c.tensors.size() != 2 * entries.size()) throw Error(ErrorKind::format, path.string() + ": tensor count");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      StyleEntry e;
      e.prompt = SoftPrompt{std::move(c.tensors[2 * i]), entries[i].at("prompt_id").get<std::string>()};
      const auto& key = c.tensors[2 * i + 1];
      e.key.assign(key.values().begin(), key.values().end());
      pool.add(entries[i].at("task_id").get<std::string>(), std::move(e));
    }
    return pool;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": corrupt manifest (" + e.what() + ")");
  }
}

void save_pool(const InstancePromptPool& pool, const std::filesystem::path& path) {
  nlohmann::json h = dims_json(pool.dims());
  h["kind"] = "instance_pool";
  h["config_hash"] = pool.config_hash();
  h["entries"] = nlohmann::json::array();
  std::vector<Matrix> centroids;
  centroids.reserve(pool.entries_.size());
  std::vector<const Matrix*> tensors;
  for (const auto& [key, e] : pool.entries_) {
    h["entries"].push_back({{"task_id", key.first}, {"cluster_index", key.second}, {"prompt_id", e.prompt.prompt_id}});
    centroids.push_back(Matrix::row_vector(e.centroid.values));
  }
  std::size_t i = 0;
  for (const auto& [key, e] : pool.entries_) {
    tensors.push_back(&e.prompt.matrix);
    tensors.push_back(&centroids[i++]);
  }
  write_container(path, kInstanceMagic, kPoolVersion, std::move(h), tensors);
}

InstancePromptPool load_instance_pool(const std::filesystem::path& path, std::size_t expected_e) {
  Container c = read_container(path, kInstanceMagic, kPoolVersion);
  try {
    InstancePromptPool pool(read_dims(c.header, path, expected_e), c.header.at("config_hash").get<std::string>());
    const auto& entries = c.header.at("entries");
    if (c.tensors.size() != 2 * entries.size()) throw Error(ErrorKind::format, path.string() + ": tensor count");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      InstanceEntry e;
      e.prompt = SoftPrompt{std::move(c.tensors[2 * i]), entries[i].at("prompt_id").get<std::string>()};
      const auto& cent = c.tensors[2 * i + 1];
      e.centroid.values.assign(cent.values().begin(), cent.values().end());
      e.cluster_index = entries[i].at("cluster_index").get<std::size_t>();
      pool.add(entries[i].at("task_id").get<std::string>(), std::move(e));
    }
    return pool;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": corrupt manifest (" + e.what() + ")");
  }
}

void save_prompt(const SoftPrompt& prompt, const std::filesystem::path& path, const nlohmann::json& note) {
  nlohmann::json h;
  h["kind"] = "prompt";
  h["prompt_id"] = prompt.prompt_id;
  h["note"] = note;
  write_container(path, kPromptMagic, kPoolVersion, std::move(h), {&prompt.matrix});
}

SoftPrompt load_prompt(const std::filesystem::path& path, std::size_t expected_e, nlohmann::json* note) {
  Container c = read_container(path, kPromptMagic, kPoolVersion);
  if (c.tensors.size() != 1) throw Error(ErrorKind::format, path.string() + ": expected one tensor");
  if (expected_e != 0 && c.tensors[0].cols() != expected_e) {
    throw Error(ErrorKind::dimension_mismatch, path.string() + ": prompt width " + std::to_string(c.tensors[0].cols()) +
                                                   " does not match workspace dim " + std::to_string(expected_e));
  }
  if (note != nullptr) *note = c.header.value("note", nlohmann::json{});
  return SoftPrompt{std::move(c.tensors[0]), c.header.value("prompt_id", std::string())};
}

}  // namespace settp
