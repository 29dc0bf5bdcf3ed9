#include "settp/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "settp/error.hpp"

namespace settp {

std::size_t ClusterPolicy::clusters_for(std::size_t n) const {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "cluster count for an empty corpus");
  return std::min(n, fixed != 0 ? fixed : default_cluster_count(n));
}

WorkspaceConfig WorkspaceConfig::defaults() {
  WorkspaceConfig c;
  const Transform ts[3] = {Transform::politeness_particles, Transform::suffix_tagging, Transform::token_substitution};
  for (int i = 0; i < 3; ++i) {
    TaskConfig t;
    t.spec.name = std::string(to_string(ts[i]));
    t.spec.transform = ts[i];
    t.spec.seed = 100 + static_cast<std::uint64_t>(i);
    t.pairs = 500;
    c.sources.push_back(t);
  }
  c.target.spec.name = "target";
  c.target.spec.transform = Transform::suffix_tagging;
  c.target.spec.tag = "<G>";
  c.target.spec.seed = 200;
  c.target.pairs = 1000;
  return c;
}

void WorkspaceConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::invalid_argument, "config: " + what); };
  if (sources.empty()) bad("at least one source task is required");
  for (const auto& s : sources) {
    if (s.pairs < 10) bad("source '" + s.spec.name + "' needs at least 10 pairs");
    if (s.spec.name == target.spec.name) bad("task ids must be unique");
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = i + 1; j < sources.size(); ++j) {
      if (sources[i].spec.name == sources[j].spec.name) bad("duplicate source task '" + sources[i].spec.name + "'");
    }
  }
  if (target.pairs == 0) bad("target pool is empty");
  if (target_heldout < 2) bad("target_heldout must be >= 2");
  if (prompt_length == 0) bad("prompt_length must be >= 1");
  if (backbone.d_model == 0 || backbone.heads == 0 || backbone.d_model % backbone.heads != 0) {
    bad("d_model must be a positive multiple of heads");
  }
  if (!(lambda >= 0.0)) bad("lambda must be >= 0");
  if (!std::isfinite(theta_t) || !std::isfinite(theta_e)) bad("thresholds must be finite");
  if (beam_width == 0 || max_decode_len == 0) bad("beam_width and max_decode_len must be positive");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) bad("fractions must lie in (0, 1]");
  }
  if (seeds == 0) bad("seeds must be >= 1");
  pretrain.validate();
  source_prompt.validate();
  target_prompt.validate();
  target_model.validate();
}

nlohmann::ordered_json to_json(const SyntheticStyleSpec& spec) {
  nlohmann::ordered_json j;
  j["name"] = spec.name;
  j["transform"] = std::string(to_string(spec.transform));
  j["seed"] = spec.seed;
  j["max_seq_len"] = spec.max_seq_len;
  j["tag"] = spec.tag;
  j["particle"] = spec.particle;
  j["substitutions"] = nlohmann::ordered_json::array();
  for (const auto& [from, to] : spec.substitutions) j["substitutions"].push_back({from, to});
  return j;
}

SyntheticStyleSpec spec_from_json(const nlohmann::json& j) {
  SyntheticStyleSpec s;
  s.name = j.at("name").get<std::string>();
  s.transform = parse_transform(j.at("transform").get<std::string>());
  s.seed = j.value("seed", s.seed);
  s.max_seq_len = j.value("max_seq_len", s.max_seq_len);
  s.tag = j.value("tag", s.tag);
  s.particle = j.value("particle", s.particle);
  if (j.contains("substitutions")) {
    for (const auto& p : j["substitutions"]) s.substitutions.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  }
  return s;
}

namespace {

nlohmann::ordered_json task_json(const TaskConfig& t) {
  auto j = to_json(t.spec);
  j["pairs"] = t.pairs;
  return j;
}

TaskConfig task_from_json(const nlohmann::json& j, int vocab_size) {
  TaskConfig t;
  t.spec = spec_from_json(j);
  t.spec.vocab_size = vocab_size;
  t.pairs = j.value("pairs", t.pairs);
  return t;
}

}  // namespace

nlohmann::ordered_json WorkspaceConfig::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["data"]["vocab_size"] = vocab_size;
  j["data"]["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : sources) j["data"]["sources"].push_back(task_json(s));
  j["data"]["target"] = task_json(target);
  j["data"]["target_heldout"] = target_heldout;
  j["backbone"] = settp::to_json(backbone);
  j["pretrain"] = pretrain.to_json();
  j["dims"] = {{"m", prompt_length}, {"e", e()}, {"d", e()}};
  j["source_prompt"] = source_prompt.to_json();
  j["target_prompt"] = target_prompt.to_json();
  j["target_model"] = target_model.to_json();
  j["transfer"] = {{"lambda", lambda}, {"theta_t", theta_t}, {"theta_e", theta_e}, {"keys", keys.to_json()}};
  j["clusters"] = {{"source", source_clusters.fixed == 0 ? nlohmann::json("auto") : nlohmann::json(source_clusters.fixed)},
                   {"target", target_clusters.fixed == 0 ? nlohmann::json("auto") : nlohmann::json(target_clusters.fixed)}};
  j["inference"] = {{"beam_width", beam_width},
                    {"max_len", max_decode_len},
                    {"joint_conditioning", joint_conditioning},
                    {"search_all_tasks", search_all_tasks}};
  j["experiment"] = {{"fractions", fractions}, {"seeds", seeds}};
  return j;
}

WorkspaceConfig WorkspaceConfig::from_json(const nlohmann::json& j) {
  WorkspaceConfig c;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kConfigSchemaVersion) {
      throw Error(ErrorKind::format, "config schema version " + std::to_string(version) + " is not supported (expected " +
                                         std::to_string(kConfigSchemaVersion) + ")");
    }
    const auto& data = j.at("data");
    c.vocab_size = data.value("vocab_size", c.vocab_size);
    for (const auto& s : data.at("sources")) c.sources.push_back(task_from_json(s, c.vocab_size));
    c.target = task_from_json(data.at("target"), c.vocab_size);
    c.target_heldout = data.value("target_heldout", c.target_heldout);
    if (j.contains("backbone")) c.backbone = backbone_config_from_json(j["backbone"]);
    if (j.contains("pretrain")) c.pretrain = PretrainConfig::from_json(j["pretrain"]);
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      c.prompt_length = d.value("m", c.prompt_length);
      if (d.contains("e") && d["e"].get<std::size_t>() != c.backbone.d_model) {
        throw Error(ErrorKind::invalid_argument, "config: dims.e must equal backbone.d_model");
      }
      if (d.contains("d") && d["d"].get<std::size_t>() != c.backbone.d_model) {
        throw Error(ErrorKind::invalid_argument, "config: key dimension d must equal e");
      }
    }
    if (j.contains("source_prompt")) c.source_prompt = TrainConfig::from_json(j["source_prompt"]);
    if (j.contains("target_prompt")) c.target_prompt = TrainConfig::from_json(j["target_prompt"]);
    if (j.contains("target_model")) c.target_model = TrainConfig::from_json(j["target_model"]);
    if (j.contains("transfer")) {
      const auto& t = j["transfer"];
      c.lambda = t.value("lambda", c.lambda);
      c.theta_t = t.value("theta_t", c.theta_t);
      c.theta_e = t.value("theta_e", c.theta_e);
      if (t.contains("keys")) c.keys = KeyTrainingConfig::from_json(t["keys"]);
    }
    if (j.contains("clusters")) {
      auto policy = [](const nlohmann::json& v) {
        ClusterPolicy p;
        if (v.is_string()) {
          if (v.get<std::string>() != "auto") throw Error(ErrorKind::parse, "cluster policy must be \"auto\" or a count");
        } else {
          p.fixed = v.get<std::size_t>();
          if (p.fixed == 0) throw Error(ErrorKind::invalid_argument, "fixed cluster count must be >= 1");
        }
        return p;
      };
      if (j["clusters"].contains("source")) c.source_clusters = policy(j["clusters"]["source"]);
      if (j["clusters"].contains("target")) c.target_clusters = policy(j["clusters"]["target"]);
    }
    if (j.contains("inference")) {
      const auto& i = j["inference"];
      c.beam_width = i.value("beam_width", c.beam_width);
      c.max_decode_len = i.value("max_len", c.max_decode_len);
      c.joint_conditioning = i.value("joint_conditioning", c.joint_conditioning);
      c.search_all_tasks = i.value("search_all_tasks", c.search_all_tasks);
    }
    if (j.contains("experiment")) {
      c.fractions = j["experiment"].value("fractions", c.fractions);
      c.seeds = j["experiment"].value("seeds", c.seeds);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string WorkspaceConfig::hash() const { return Digest().update(to_json().dump()).hex(); }

WorkspaceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return WorkspaceConfig::from_json(j);
}

void save_config(const WorkspaceConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write config " + path.string());
  out << cfg.to_json().dump(2) << '\n';
}

}  // namespace settp
