#include "workspace.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "settp/error.hpp"
#include "settp/matrix.hpp"

namespace settp::cli {

namespace {

std::string format_fraction(double f) {
  std::ostringstream s;
  s << f;
  return s.str();
}

}  // namespace

std::string RunKey::dir() const {
  std::string d = "runs/" + std::string(to_string(variant));
  if (lambda) d += "-lambda" + format_fraction(*lambda);
  return d + "/f" + format_fraction(fraction) + "/s" + std::to_string(seed);
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  Digest d;
  std::string buf(1 << 16, '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return d.hex();
}

Workspace::Workspace(std::filesystem::path root) : root_(std::move(root)) {}

bool Workspace::has_config() const { return std::filesystem::exists(path("config.json")); }

const WorkspaceConfig& Workspace::config() const {
  if (!config_) {
    if (!has_config()) {
      throw Error(ErrorKind::missing_artifact,
                  path("config.json").string() + " is missing; run `settp gen-data --config FILE` first");
    }
    config_ = load_config(path("config.json"));
  }
  return *config_;
}

void Workspace::install_config(const WorkspaceConfig& cfg) {
  std::filesystem::create_directories(root_);
  save_config(cfg, path("config.json"));
  config_ = cfg;
  record("config.json", "gen-data");
}

nlohmann::json Workspace::load_manifest() const {
  std::ifstream in(path("manifest.json"));
  if (!in) return {{"schema", "settp.manifest/1"}, {"artifacts", nlohmann::json::object()}};
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path("manifest.json").string() + ": " + e.what());
  }
}

std::filesystem::path Workspace::require(const std::string& rel, const std::string& producer) const {
  const auto p = path(rel);
  if (!std::filesystem::exists(p)) {
    throw Error(ErrorKind::missing_artifact, p.string() + " is missing; run `settp " + producer + "` first");
  }
  const auto manifest = load_manifest();
  const auto& arts = manifest.at("artifacts");
  if (arts.contains(rel)) {
    const std::string h = arts[rel].value("config_hash", "");
    if (h != config().hash()) {
      throw Error(ErrorKind::missing_artifact, p.string() + " was produced under another configuration (" +
                                                   h.substr(0, 12) + "); rerun `settp " + producer + "`");
    }
  }
  return p;
}

void Workspace::record(const std::string& rel, const std::string& producer) {
  auto manifest = load_manifest();
  manifest["artifacts"][rel] = {
      {"producer", producer}, {"config_hash", config().hash()}, {"sha256", file_sha256(path(rel))}};
  const auto tmp = path("manifest.json.tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path("manifest.json"));
}

SuiteData Workspace::suite() const {
  const auto& cfg = config();
  for (const auto& s : cfg.sources) require("data/" + s.spec.name + ".jsonl", "gen-data");
  require("data/" + cfg.target.spec.name + ".jsonl", "gen-data");
  return load_suite(cfg, path("data"));
}

SourceArtifacts Workspace::source_artifacts() const {
  const auto& cfg = config();
  Backbone model = load_checkpoint(require("source/backbone.ckpt", "pretrain-source"));
  model.set_trainable(false);
  return SourceArtifacts{std::move(model),
                         load_style_pool(require("source/style.pool", "build-pools"), cfg.e()),
                         load_instance_pool(require("source/instance.pool", "build-pools"), cfg.e()),
                         load_instance_pool(require("source/flat.pool", "build-pools"), cfg.e()),
                         {},
                         {},
                         {}};
}

}  // namespace settp::cli
