#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "settp/error.hpp"
#include "settp/experiment.hpp"
#include "workspace.hpp"

using namespace settp;
using settp::cli::RunKey;
using settp::cli::Workspace;

namespace {

struct Options {
  std::string workspace;
  std::string config_file;
  std::string variant = "full";
  double fraction = -1.0;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::string judge_cmd;
  std::vector<double> fractions;
  std::size_t seeds = 0;
  std::vector<std::string> variants;
};

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out << text;
}

void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

void fresh_log(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::filesystem::remove(p);
}

RunKey run_key(const Workspace& ws, const Options& o) {
  RunKey k;
  k.variant = parse_variant(o.variant);
  k.fraction = o.fraction > 0.0 ? o.fraction : ws.config().fractions.front();
  k.seed = o.seed;
  k.lambda = o.lambda;
  return k;
}

WorkspaceConfig effective_config(const Workspace& ws, const RunKey& k) {
  WorkspaceConfig cfg = ws.config();
  if (k.lambda) cfg.lambda = *k.lambda;
  cfg.validate();
  return cfg;
}

PipelineSwitches run_switches(const RunKey& k) {
  return k.variant == Variant::baseline ? PipelineSwitches{} : switches_for(k.variant);
}

nlohmann::ordered_json run_note(const RunKey& k, const WorkspaceConfig& cfg) {
  return {{"variant", to_string(k.variant)},
          {"fraction", k.fraction},
          {"seed", k.seed},
          {"lambda", cfg.lambda},
          {"config_hash", cfg.hash()}};
}

using Artifacts = std::vector<std::string>;

Artifacts cmd_gen_data(Workspace& ws, const Options& o) {
  if (!o.config_file.empty()) {
    ws.install_config(load_config(o.config_file));
  } else if (!ws.has_config()) {
    throw Error(ErrorKind::missing_artifact, "no config.json in " + ws.root().string() + "; pass --config FILE");
  }
  const SuiteData suite = generate_suite(ws.config());
  Artifacts out{"config.json"};
  for (const auto& p : save_suite(suite, ws.path("data"))) {
    const std::string rel = "data/" + p.filename().string();
    ws.record(rel, "gen-data");
    out.push_back(rel);
  }
  return out;
}

Artifacts cmd_pretrain_source(Workspace& ws, const Options&) {
  const auto& cfg = ws.config();
  const SuiteData suite = ws.suite();
  TrainLog log;
  const Backbone model = pretrain_source_model(cfg, suite, &log);
  std::filesystem::create_directories(ws.path("source"));
  save_checkpoint(model, ws.path("source/backbone.ckpt"), cfg.hash());
  fresh_log(ws.path("source/backbone_log.jsonl"));
  log.append_jsonl(ws.path("source/backbone_log.jsonl"));
  for (const char* rel : {"source/backbone.ckpt", "source/backbone_log.jsonl"}) ws.record(rel, "pretrain-source");
  return {"source/backbone.ckpt", "source/backbone_log.jsonl"};
}

Artifacts cmd_build_pools(Workspace& ws, const Options&) {
  const auto& cfg = ws.config();
  const SuiteData suite = ws.suite();
  Backbone model = load_checkpoint(ws.require("source/backbone.ckpt", "pretrain-source"));
  model.set_trainable(false);
  std::vector<TrainLog> logs;
  std::vector<ClusterAssignment> assignments;
  const auto style = train_style_pool(cfg, suite, model, &logs);
  const auto ins = train_instance_pool(cfg, suite, model, false, &assignments, &logs);
  const auto flat = train_instance_pool(cfg, suite, model, true, nullptr, &logs);
  save_pool(style, ws.path("source/style.pool"));
  save_pool(ins, ws.path("source/instance.pool"));
  save_pool(flat, ws.path("source/flat.pool"));
  Artifacts out{"source/style.pool", "source/instance.pool", "source/flat.pool"};
  std::filesystem::create_directories(ws.path("source/clusters"));
  for (std::size_t n = 0; n < suite.sources.size(); ++n) {
    const std::string rel = "source/clusters/" + suite.sources[n].train.task_id + ".jsonl";
    export_assignment_jsonl(assignments[n], suite.sources[n].train, ws.path(rel));
    out.push_back(rel);
  }
  fresh_log(ws.path("source/prompt_logs.jsonl"));
  for (const auto& l : logs) l.append_jsonl(ws.path("source/prompt_logs.jsonl"));
  out.push_back("source/prompt_logs.jsonl");
  for (const auto& rel : out) ws.record(rel, "build-pools");
  return out;
}

Artifacts cmd_transfer(Workspace& ws, const Options& o) {
  const RunKey key = run_key(ws, o);
  const WorkspaceConfig cfg = effective_config(ws, key);
  const SuiteData suite = ws.suite();
  const std::string dir = key.dir();
  std::filesystem::create_directories(ws.path(dir));
  Artifacts out;
  nlohmann::ordered_json report = run_note(key, cfg);
  if (key.variant == Variant::baseline) {
    Backbone model = load_checkpoint(ws.require("source/backbone.ckpt", "pretrain-source"));
    model.set_trainable(false);
    const StyleCorpus few = sample_few_shot(suite.target.train, key.fraction, key.seed);
    save_jsonl(few, ws.path(dir + "/few_shot.jsonl"));
    const StyleEntry pt = baseline_prompt(cfg, suite, model, few, key.seed);
    save_prompt(pt.prompt, ws.path(dir + "/target_prompt.prm"), run_note(key, cfg));
    out = {dir + "/few_shot.jsonl", dir + "/target_prompt.prm"};
  } else {
    const SourceArtifacts src = ws.source_artifacts();
    const TransferStage t = run_transfer(cfg, suite, src, run_switches(key), key.fraction, key.seed);
    save_jsonl(t.few_shot, ws.path(dir + "/few_shot.jsonl"));
    out.push_back(dir + "/few_shot.jsonl");
    if (t.target_prompt) {
      save_prompt(*t.target_prompt, ws.path(dir + "/target_prompt.prm"), run_note(key, cfg));
      out.push_back(dir + "/target_prompt.prm");
    }
    if (t.interpolated) {
      save_prompt(*t.interpolated, ws.path(dir + "/interpolated.prm"), run_note(key, cfg));
      out.push_back(dir + "/interpolated.prm");
    }
    report["transfer"] = t.report.to_json();
  }
  write_json(ws.path(dir + "/transfer.json"), report);
  out.push_back(dir + "/transfer.json");
  for (const auto& rel : out) ws.record(rel, "transfer");
  return out;
}

Artifacts cmd_train_target(Workspace& ws, const Options& o) {
  const RunKey key = run_key(ws, o);
  const WorkspaceConfig cfg = effective_config(ws, key);
  const SuiteData suite = ws.suite();
  const std::string dir = key.dir();
  const std::string producer = "transfer --variant " + std::string(to_string(key.variant));
  ws.require(dir + "/transfer.json", producer);
  Backbone source = load_checkpoint(ws.require("source/backbone.ckpt", "pretrain-source"));
  source.set_trainable(false);
  const StyleCorpus few = sample_few_shot(suite.target.train, key.fraction, key.seed);
  Artifacts out{dir + "/target_model.ckpt", dir + "/target.pool"};
  if (key.variant == Variant::baseline) {
    const SoftPrompt pt = load_prompt(ws.require(dir + "/target_prompt.prm", producer), cfg.e());
    save_checkpoint(source, ws.path(dir + "/target_model.ckpt"), cfg.hash());
    save_pool(baseline_pool(cfg, few.task_id, pt), ws.path(dir + "/target.pool"));
  } else {
    TransferStage t;
    t.few_shot = few;
    if (std::filesystem::exists(ws.path(dir + "/target_prompt.prm"))) {
      t.target_prompt = load_prompt(ws.require(dir + "/target_prompt.prm", producer), cfg.e());
    }
    if (std::filesystem::exists(ws.path(dir + "/interpolated.prm"))) {
      t.interpolated = load_prompt(ws.require(dir + "/interpolated.prm", producer), cfg.e());
    }
    const TargetStage stage = run_target_training(cfg, suite, source, t, run_switches(key), key.seed);
    save_checkpoint(stage.model, ws.path(dir + "/target_model.ckpt"), cfg.hash());
    save_pool(stage.pool, ws.path(dir + "/target.pool"));
    fresh_log(ws.path(dir + "/model_log.jsonl"));
    stage.model_log.append_jsonl(ws.path(dir + "/model_log.jsonl"));
    out.push_back(dir + "/model_log.jsonl");
  }
  for (const auto& rel : out) ws.record(rel, "train-target");
  return out;
}

Artifacts cmd_infer(Workspace& ws, const Options& o) {
  const RunKey key = run_key(ws, o);
  const WorkspaceConfig cfg = effective_config(ws, key);
  const SuiteData suite = ws.suite();
  const std::string dir = key.dir();
  const std::string producer = "train-target --variant " + std::string(to_string(key.variant));
  const Backbone model = load_checkpoint(ws.require(dir + "/target_model.ckpt", producer));
  const InstancePromptPool pool = load_instance_pool(ws.require(dir + "/target.pool", producer), cfg.e());
  std::optional<SoftPrompt> prefix;
  if (cfg.joint_conditioning && std::filesystem::exists(ws.path(dir + "/interpolated.prm"))) {
    prefix = load_prompt(ws.path(dir + "/interpolated.prm"), cfg.e());
  }
  const auto results = batch_infer(model, pool, suite.target.train.task_id, suite.target.test,
                                    inference_options(cfg, run_switches(key), key.seed, prefix ? &*prefix : nullptr));
  write_inference_jsonl(results, ws.path(dir + "/outputs.jsonl"));
  ws.record(dir + "/outputs.jsonl", "infer");
  return {dir + "/outputs.jsonl"};
}

Artifacts cmd_evaluate(Workspace& ws, const Options& o, nlohmann::ordered_json& summary) {
  const RunKey key = run_key(ws, o);
  const WorkspaceConfig cfg = effective_config(ws, key);
  const std::string dir = key.dir();
  const auto outputs = read_inference_jsonl(ws.require(dir + "/outputs.jsonl", "infer --variant " + std::string(to_string(key.variant))));
  SyntheticStyleSpec spec = cfg.target.spec;
  spec.vocab_size = cfg.vocab_size;
  std::unique_ptr<StyleJudge> judge;
  if (o.judge_cmd.empty()) {
    judge = std::make_unique<OracleJudge>(spec);
  } else {
    judge = std::make_unique<ProcessJudge>(o.judge_cmd);
  }
  MetricsReport r = score_outputs(outputs, *judge);
  r.seeds = {key.seed};
  r.config_hash = cfg.hash();
  r.protocol = key.fraction >= 1.0 ? "full" : "few_shot";
  r.variant = std::string(to_string(key.variant));
  r.fraction = key.fraction;
  const auto j = r.to_json();
  validate_metrics_report(j);
  write_json(ws.path(dir + "/metrics.json"), j);
  ws.record(dir + "/metrics.json", "evaluate");
  summary["metrics"] = j;
  return {dir + "/metrics.json"};
}

nlohmann::ordered_json summarize(const std::vector<SweepRow>& rows, const WorkspaceConfig& cfg,
                                 const std::vector<double>& fractions, std::size_t seeds,
                                 const std::vector<Variant>& variants) {
  nlohmann::ordered_json j;
  j["config_hash"] = cfg.hash();
  j["fractions"] = fractions;
  j["seeds"] = seeds;
  nlohmann::ordered_json methods = nlohmann::ordered_json::object();
  for (Variant v : variants) {
    nlohmann::ordered_json m;
    std::vector<MetricsReport> all;
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (double f : fractions) {
      std::vector<MetricsReport> runs;
      for (const auto& r : rows) {
        if (r.variant == v && r.fraction == f) runs.push_back(r.report);
      }
      all.insert(all.end(), runs.begin(), runs.end());
      MetricsReport mean = average_reports(runs);
      mean.protocol = "few_shot";
      per.push_back(mean.to_json());
    }
    MetricsReport overall = average_reports(all);
    overall.protocol = "few_shot";
    overall.fraction = 0.0;
    m["per_fraction"] = per;
    m["overall"] = overall.to_json();
    methods[std::string(to_string(v))] = m;
  }
  j["methods"] = methods;
  return j;
}

std::string sweep_svg(const nlohmann::ordered_json& summary) {
  const double w = 480, h = 320, left = 50, right = 20, top = 20, bottom = 40;
  const auto& fr = summary["fractions"];
  const std::size_t nf = fr.size();
  auto x = [&](std::size_t i) { return left + (nf > 1 ? (w - left - right) * static_cast<double>(i) / static_cast<double>(nf - 1) : 0.0); };
  auto y = [&](double g) { return top + (h - top - bottom) * (1.0 - g / 100.0); };
  const char* colors[] = {"#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << w - right << "\" y2=\"" << y(0) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left << "\" y2=\"" << y(100) << "\" stroke=\"black\"/>\n";
  for (int g = 0; g <= 100; g += 25) s << "<text x=\"" << left - 30 << "\" y=\"" << y(g) + 4 << "\">" << g << "</text>\n";
  for (std::size_t i = 0; i < nf; ++i) {
    s << "<text x=\"" << x(i) - 12 << "\" y=\"" << h - bottom + 16 << "\">" << fr[i].get<double>() * 100 << "%</text>\n";
  }
  s << "<text x=\"" << w / 2 - 40 << "\" y=\"" << h - 6 << "\">few-shot fraction</text>\n";
  std::size_t c = 0;
  for (const auto& [name, m] : summary["methods"].items()) {
    const char* col = colors[c % 7];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < nf; ++i) s << x(i) << ',' << y(m["per_fraction"][i]["g"].get<double>()) << ' ';
    s << "\"/>\n<text x=\"" << left + 10 << "\" y=\"" << top + 14 * (c + 1) << "\" fill=\"" << col << "\">" << name
      << "</text>\n";
    ++c;
  }
  s << "</svg>\n";
  return s.str();
}

Artifacts run_grid(Workspace& ws, const Options& o, const std::string& stem, std::vector<Variant> variants,
                   nlohmann::ordered_json& summary) {
  const auto& cfg = ws.config();
  const auto fractions = o.fractions.empty() ? cfg.fractions : o.fractions;
  const std::size_t seeds = o.seeds > 0 ? o.seeds : cfg.seeds;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::invalid_argument, "fractions must lie in (0, 1]");
  }
  const SuiteData suite = ws.suite();
  const SourceArtifacts src = ws.source_artifacts();
  const auto rows = run_sweep(cfg, suite, src, fractions, seeds, variants);
  std::filesystem::create_directories(ws.path("reports"));
  const std::string csv = "reports/" + stem + ".csv", json = "reports/" + stem + ".json", svg = "reports/" + stem + ".svg";
  write_sweep_csv(rows, ws.path(csv));
  summary = summarize(rows, cfg, fractions, seeds, variants);
  write_json(ws.path(json), summary);
  write_text(ws.path(svg), sweep_svg(summary));
  for (const auto& rel : {csv, json, svg}) ws.record(rel, stem == "sweep" ? "sweep" : "ablate");
  return {csv, json, svg};
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(parse_variant(n));
  return out;
}

void print_error(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-level transferable soft-prompt style transfer pipeline"};
  app.require_subcommand(1);
  Options o;
  const char* env = std::getenv("SETTP_WORKSPACE");
  if (env != nullptr) o.workspace = env;
  app.add_option("-w,--workspace", o.workspace, "Workspace directory (default: $SETTP_WORKSPACE)");

  auto run_flags = [&](CLI::App* c) {
    c->add_option("--variant", o.variant, "full, baseline, wo_aar, wo_style, wo_dt, wo_pi or wo_cluster")
        ->capture_default_str();
    c->add_option("--fraction", o.fraction, "Few-shot fraction of the target pool (default: first configured fraction)");
    c->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  };
  auto grid_flags = [&](CLI::App* c) {
    c->add_option("--fractions", o.fractions, "Comma-separated fractions (default: from config)")->delimiter(',');
    c->add_option("--seeds", o.seeds, "Seeds 0..n-1 per fraction (default: from config)");
  };

  auto* gen = app.add_subcommand("gen-data", "Copy the config into the workspace and generate the synthetic suite");
  gen->add_option("--config", o.config_file, "Config file to install (required on a fresh workspace)");
  app.add_subcommand("pretrain-source", "Denoising-pretrain the source backbone");
  app.add_subcommand("build-pools", "Train source style prompts and clustered/flat instance prompts");
  auto* transfer = app.add_subcommand("transfer", "Few-shot target prompt, domain temperature, keys, interpolation");
  run_flags(transfer);
  transfer->add_option("--lambda", o.lambda, "Override the interpolation weight");
  auto* train = app.add_subcommand("train-target", "Tune the target model and its instance prompts");
  run_flags(train);
  train->add_option("--lambda", o.lambda, "Must match the value given to transfer");
  auto* infer = app.add_subcommand("infer", "Decode the target test split");
  run_flags(infer);
  infer->add_option("--lambda", o.lambda, "Must match the value given to transfer");
  auto* eval = app.add_subcommand("evaluate", "Score outputs: CC, ACC, G");
  run_flags(eval);
  eval->add_option("--lambda", o.lambda, "Must match the value given to transfer");
  eval->add_option("--judge-cmd", o.judge_cmd, "External style classifier (stdin sentences, stdout 0/1 lines)");
  auto* ablate = app.add_subcommand("ablate", "Full method and its ablations over fractions and seeds");
  grid_flags(ablate);
  ablate->add_option("--variants", o.variants, "Ablations to run (default: all five)")->delimiter(',');
  auto* sweep = app.add_subcommand("sweep", "Few-shot sweep of the full method against the baseline");
  grid_flags(sweep);
  sweep->add_option("--variants", o.variants, "Methods (default: baseline,full)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("", "usage", e.what());
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (o.workspace.empty()) {
      throw Error(ErrorKind::invalid_argument, "no workspace: pass --workspace or set SETTP_WORKSPACE");
    }
    Workspace ws(o.workspace);
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    Artifacts produced;
    if (command == "gen-data") produced = cmd_gen_data(ws, o);
    else if (command == "pretrain-source") produced = cmd_pretrain_source(ws, o);
    else if (command == "build-pools") produced = cmd_build_pools(ws, o);
    else if (command == "transfer") produced = cmd_transfer(ws, o);
    else if (command == "train-target") produced = cmd_train_target(ws, o);
    else if (command == "infer") produced = cmd_infer(ws, o);
    else if (command == "evaluate") produced = cmd_evaluate(ws, o, summary);
    else if (command == "ablate") {
      std::vector<Variant> vs{Variant::full};
      const auto chosen = o.variants.empty() ? ablation_variants() : parse_variants(o.variants);
      for (Variant v : chosen) {
        if (std::find(ablation_variants().begin(), ablation_variants().end(), v) == ablation_variants().end()) {
          throw Error(ErrorKind::invalid_argument, "ablate takes ablation variants only, got '" +
                                                       std::string(to_string(v)) + "'");
        }
        vs.push_back(v);
      }
      produced = run_grid(ws, o, "ablation", vs, summary);
    } else if (command == "sweep") {
      const auto vs = o.variants.empty() ? std::vector<Variant>{Variant::baseline, Variant::full}
                                         : parse_variants(o.variants);
      produced = run_grid(ws, o, "sweep", vs, summary);
    }
    nlohmann::ordered_json done;
    done["command"] = command;
    done["workspace"] = ws.root().string();
    done["config_hash"] = ws.config().hash();
    done["artifacts"] = produced;
    for (const auto& [k, v] : summary.items()) {
      if (k == "metrics") done[k] = v;
    }
    std::cout << done.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    print_error(command, to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    print_error(command, "internal", e.what());
  }
  return 1;
}
