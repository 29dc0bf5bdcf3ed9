#include "settp/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "settp/error.hpp"

namespace settp {

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t stage) { return seed * 1000003ULL + stage; }

StyleCorpus subset(const StyleCorpus& base, const std::vector<std::size_t>& idx) {
  StyleCorpus out;
  out.task_id = base.task_id;
  out.style_attribute = base.style_attribute;
  out.split = base.split;
  out.vocab = base.vocab;
  for (auto i : idx) out.pairs.push_back(base.pairs.at(i));
  return out;
}

ClusterAssignment assign_clusters(const Backbone& model, const StyleCorpus& corpus, std::size_t clusters) {
  PartitionOptions opt;
  opt.allow_degenerate = true;
  return cluster_contents(model, corpus, clusters, opt);
}

std::vector<const SoftPrompt*> source_prompts(const WorkspaceConfig& cfg, const SourceArtifacts& src) {
  std::vector<const SoftPrompt*> out;
  for (const auto& s : cfg.sources) out.push_back(&src.style_pool.at(s.spec.name).prompt);
  return out;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::baseline: return "baseline";
    case Variant::wo_aar: return "wo_aar";
    case Variant::wo_style: return "wo_style";
    case Variant::wo_dt: return "wo_dt";
    case Variant::wo_pi: return "wo_pi";
    case Variant::wo_cluster: return "wo_cluster";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::full, Variant::baseline, Variant::wo_aar, Variant::wo_style, Variant::wo_dt, Variant::wo_pi,
                    Variant::wo_cluster}) {
    if (text == to_string(v)) return v;
  }
  throw Error(ErrorKind::parse, "unknown variant '" + std::string(text) +
                                    "' (expected full, baseline, wo_aar, wo_style, wo_dt, wo_pi, wo_cluster)");
}

const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v{Variant::wo_aar, Variant::wo_style, Variant::wo_dt, Variant::wo_pi,
                                      Variant::wo_cluster};
  return v;
}

nlohmann::ordered_json PipelineSwitches::to_json() const {
  return {{"aar", aar}, {"style", style}, {"dt", dt}, {"pi", pi}, {"cluster", cluster}};
}

PipelineSwitches switches_for(Variant v) {
  PipelineSwitches s;
  switch (v) {
    case Variant::full: break;
    case Variant::wo_aar: s.aar = false; break;
    case Variant::wo_style: s.style = false; break;
    case Variant::wo_dt: s.dt = false; break;
    case Variant::wo_pi: s.pi = false; break;
    case Variant::wo_cluster: s.cluster = false; break;
    case Variant::baseline:
      throw Error(ErrorKind::invalid_argument, "the baseline is not a configuration of the full pipeline");
  }
  return s;
}

std::vector<std::string> switch_diff(const PipelineSwitches& a, const PipelineSwitches& b) {
  std::vector<std::string> out;
  const auto ja = a.to_json(), jb = b.to_json();
  for (const auto& [k, v] : ja.items()) {
    if (jb.at(k) != v) out.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------- data

SuiteData generate_suite(const WorkspaceConfig& cfg) {
  cfg.validate();
  SuiteData suite;
  for (const auto& s : cfg.sources) {
    SyntheticStyleSpec spec = s.spec;
    spec.vocab_size = cfg.vocab_size;
    suite.sources.push_back(split_corpus(generate_synthetic_task(spec, s.pairs)));
  }
  suite.target_spec = cfg.target.spec;
  suite.target_spec.vocab_size = cfg.vocab_size;
  StyleCorpus all = generate_synthetic_task(suite.target_spec, cfg.target.pairs + cfg.target_heldout);
  std::vector<std::size_t> pool(cfg.target.pairs), val, test;
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = cfg.target.pairs; i < all.size(); ++i) {
    (i - cfg.target.pairs < cfg.target_heldout / 2 ? val : test).push_back(i);
  }
  suite.target.train = subset(all, pool);
  suite.target.validation = subset(all, val);
  suite.target.validation.split = Split::validation;
  suite.target.test = subset(all, test);
  suite.target.test.split = Split::test;
  return suite;
}

const Vocabulary& suite_vocabulary(const SuiteData& suite) { return suite.target.train.vocab; }

std::vector<std::filesystem::path> save_suite(const SuiteData& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (const TaskData* t : [&] {
         std::vector<const TaskData*> all;
         for (const auto& s : suite.sources) all.push_back(&s);
         all.push_back(&suite.target);
         return all;
       }()) {
    out.push_back(dir / (t->train.task_id + ".jsonl"));
    save_jsonl(*t, out.back());
  }
  return out;
}

namespace {

TaskData load_task(const std::filesystem::path& path, const SyntheticStyleSpec& spec, const Vocabulary& vocab) {
  TaskData t = load_jsonl(path, std::string(to_string(spec.transform)));
  for (StyleCorpus* c : {&t.train, &t.validation, &t.test}) {
    for (const auto& p : c->pairs) {
      for (const TokenSeq* seq : {&p.source, &p.target}) {
        for (const auto& tok : *seq) {
          if (!vocab.contains(tok)) {
            throw Error(ErrorKind::format, path.string() + ": token '" + tok + "' is outside the workspace vocabulary");
          }
        }
      }
    }
    c->vocab = vocab;
    c->task_id = spec.name;
  }
  return t;
}

}  // namespace

SuiteData load_suite(const WorkspaceConfig& cfg, const std::filesystem::path& dir) {
  const Vocabulary vocab = synthetic_vocabulary(cfg.vocab_size);
  SuiteData suite;
  for (const auto& s : cfg.sources) suite.sources.push_back(load_task(dir / (s.spec.name + ".jsonl"), s.spec, vocab));
  suite.target_spec = cfg.target.spec;
  suite.target_spec.vocab_size = cfg.vocab_size;
  suite.target = load_task(dir / (cfg.target.spec.name + ".jsonl"), suite.target_spec, vocab);
  return suite;
}

// ---------------------------------------------------------------- source stage

Backbone pretrain_source_model(const WorkspaceConfig& cfg, const SuiteData& suite, TrainLog* log) {
  Backbone model(suite_vocabulary(suite), cfg.backbone);
  std::vector<const StyleCorpus*> corpora;
  for (const auto& s : suite.sources) corpora.push_back(&s.train);
  TrainLog l = pretrain_backbone(model, corpora, cfg.pretrain);
  model.set_trainable(false);
  if (log != nullptr) *log = std::move(l);
  return model;
}

StylePromptPool train_style_pool(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& model,
                                 std::vector<TrainLog>* logs) {
  StylePromptPool pool(PoolDims{cfg.prompt_length, cfg.e(), cfg.e()}, cfg.hash());
  for (std::size_t n = 0; n < suite.sources.size(); ++n) {
    const auto& data = suite.sources[n];
    TrainConfig tc = cfg.source_prompt;
    tc.seed = derive(cfg.source_prompt.seed, 10 + n);
    TrainLog log;
    StyleEntry e = pretrain_style_prompt(model, data.train, tc, cfg.prompt_length, &data.validation, &log);
    pool.add(data.train.task_id, std::move(e));
    if (logs != nullptr) logs->push_back(std::move(log));
  }
  return pool;
}

InstancePromptPool train_instance_pool(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& model,
                                       bool flat, std::vector<ClusterAssignment>* assignments,
                                       std::vector<TrainLog>* logs) {
  InstancePromptPool pool(PoolDims{cfg.prompt_length, cfg.e(), cfg.e()}, cfg.hash());
  for (std::size_t n = 0; n < suite.sources.size(); ++n) {
    const auto& train = suite.sources[n].train;
    const std::size_t clusters = flat ? 1 : cfg.source_clusters.clusters_for(train.size());
    ClusterAssignment a = assign_clusters(model, train, clusters);
    TrainConfig tc = cfg.source_prompt;
    tc.seed = derive(cfg.source_prompt.seed, (flat ? 500 : 100) + 20 * n);
    for (auto& e : pretrain_instance_prompts(model, train, a, tc, cfg.prompt_length, logs)) {
      pool.add(train.task_id, std::move(e));
    }
    if (assignments != nullptr) assignments->push_back(std::move(a));
  }
  return pool;
}

SourceArtifacts build_source_artifacts(const WorkspaceConfig& cfg, const SuiteData& suite) {
  TrainLog blog;
  Backbone model = pretrain_source_model(cfg, suite, &blog);
  std::vector<TrainLog> logs;
  StylePromptPool style = train_style_pool(cfg, suite, model, &logs);
  std::vector<ClusterAssignment> assignments;
  InstancePromptPool ins = train_instance_pool(cfg, suite, model, false, &assignments, &logs);
  InstancePromptPool flat = train_instance_pool(cfg, suite, model, true, nullptr, &logs);
  return SourceArtifacts{std::move(model), std::move(style), std::move(ins), std::move(flat),
                         std::move(assignments), std::move(blog), std::move(logs)};
}

// ---------------------------------------------------------------- target stage

TransferStage run_transfer(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src,
                           const PipelineSwitches& sw, double fraction, std::uint64_t seed) {
  TransferStage out;
  out.few_shot = sample_few_shot(suite.target.train, fraction, seed);
  for (const auto& s : cfg.sources) out.report.source_tasks.push_back(s.spec.name);
  out.report.lambda = sw.aar ? cfg.lambda : 0.0;
  if (!sw.style) return out;

  const Backbone& model = src.model;
  TrainConfig tc = cfg.target_prompt;
  tc.seed = derive(seed, 1);
  StyleEntry pt = pretrain_style_prompt(model, out.few_shot, tc, cfg.prompt_length, &suite.target.validation);
  out.target_prompt = pt.prompt;

  const std::size_t n_src = cfg.sources.size();
  if (sw.dt) {
    // Target instance pool on the frozen source model, compared against the source pools.
    const std::size_t clusters = sw.cluster ? cfg.target_clusters.clusters_for(out.few_shot.size()) : 1;
    ClusterAssignment a = assign_clusters(model, out.few_shot, clusters);
    TrainConfig ic = cfg.target_prompt;
    ic.seed = derive(seed, 2);
    const auto target_entries = pretrain_instance_prompts(model, out.few_shot, a, ic, cfg.prompt_length);
    const InstancePromptPool& source_pool = sw.cluster ? src.instance_pool : src.flat_pool;
    std::vector<InstanceSet> domains;
    for (const auto& s : cfg.sources) domains.push_back(source_pool.entries_for(s.spec.name));
    InstanceSet target;
    for (const auto& e : target_entries) target.push_back(&e);
    out.report.temps = domain_temperature(domains, target, cfg.theta_t, cfg.theta_e);
  } else {
    out.report.temps = uniform_temperature(n_src, cfg.theta_t, cfg.theta_e);
  }

  std::vector<const StyleCorpus*> source_train;
  for (const auto& s : suite.sources) source_train.push_back(&s.train);
  const Queries queries = compute_queries(model, source_train, out.few_shot);
  std::vector<std::vector<double>> keys;
  for (const auto& s : cfg.sources) keys.push_back(src.style_pool.at(s.spec.name).key);
  const auto prompts = source_prompts(cfg, src);
  if (sw.aar && cfg.keys.steps > 0) {
    KeyTrainingConfig kc = cfg.keys;
    kc.seed = derive(seed, 3);
    out.report.key_losses = train_keys(model, pt.prompt, prompts, queries, out.report.temps, out.report.lambda,
                                       out.few_shot, kc, keys);
    out.report.key_steps = kc.steps;
  }
  out.report.scores = retrieval_scores(queries.sources, queries.target, keys, out.report.temps);
  out.interpolated = interpolate_prompt(pt.prompt, prompts, out.report.scores, out.report.lambda);
  return out;
}

TargetStage run_target_training(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& source_model,
                                const TransferStage& transfer, const PipelineSwitches& sw, std::uint64_t seed) {
  const SoftPrompt* prefix = transfer.interpolated ? &*transfer.interpolated : nullptr;
  TrainConfig mc = cfg.target_model;
  mc.seed = derive(seed, 4);
  TrainLog mlog;
  Backbone tuned = tune_target(source_model, prefix, transfer.few_shot, mc, &suite.target.validation, &mlog);
  tuned.set_trainable(false);

  const std::size_t clusters = sw.cluster ? cfg.target_clusters.clusters_for(transfer.few_shot.size()) : 1;
  ClusterAssignment a = assign_clusters(tuned, transfer.few_shot, clusters);
  InstancePromptPool pool(PoolDims{cfg.prompt_length, cfg.e(), cfg.e()}, cfg.hash());
  for (std::size_t k = 0; k < a.clusters; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      if (a.labels[i] == k) idx.push_back(i);
    }
    const StyleCorpus part = subset(transfer.few_shot, idx);
    TrainConfig pc = cfg.target_prompt;
    pc.seed = derive(seed, 10 + k);
    InstanceEntry e;
    e.prompt = prefix != nullptr ? *prefix : init_prompt(cfg.prompt_length, cfg.e(), pc.seed);
    e.prompt.prompt_id = transfer.few_shot.task_id + "/ins/" + std::to_string(k);
    e.centroid = a.centroids[k];
    e.cluster_index = k;
    train_prompt(tuned, e.prompt, part, pc, &suite.target.validation);
    pool.add(transfer.few_shot.task_id, std::move(e));
  }
  return TargetStage{std::move(tuned), std::move(pool), std::move(mlog)};
}

StyleEntry baseline_prompt(const WorkspaceConfig& cfg, const SuiteData& suite, const Backbone& source_model,
                           const StyleCorpus& few_shot, std::uint64_t seed) {
  TrainConfig tc = cfg.target_prompt;
  tc.seed = derive(seed, 1);
  return pretrain_style_prompt(source_model, few_shot, tc, cfg.prompt_length, &suite.target.validation);
}

InstancePromptPool baseline_pool(const WorkspaceConfig& cfg, const std::string& task_id, const SoftPrompt& prompt) {
  InstancePromptPool pool(PoolDims{cfg.prompt_length, cfg.e(), cfg.e()}, cfg.hash());
  pool.add(task_id, InstanceEntry{prompt, ContentVector{std::vector<double>(cfg.e(), 0.0)}, 0});
  return pool;
}

InferenceOptions inference_options(const WorkspaceConfig& cfg, const PipelineSwitches& sw, std::uint64_t seed,
                                   const SoftPrompt* style_prefix) {
  InferenceOptions o;
  o.beam.beam_width = cfg.beam_width;
  o.beam.max_len = cfg.max_decode_len;
  o.random_prompt = !sw.pi;
  o.seed = derive(seed, 5);
  o.all_tasks = cfg.search_all_tasks;
  o.style_prefix = cfg.joint_conditioning ? style_prefix : nullptr;
  return o;
}

MetricsReport score_outputs(const std::vector<InferenceResult>& outputs, const StyleJudge& judge) {
  if (outputs.empty()) throw Error(ErrorKind::invalid_argument, "no outputs to score");
  std::vector<TokenSeq> hyps, refs;
  std::size_t failed = 0;
  for (const auto& r : outputs) {
    hyps.push_back(r.error.empty() ? r.output : TokenSeq{});
    refs.push_back(r.source);
    failed += !r.error.empty();
  }
  const AccuracyResult acc = style_accuracy(hyps, judge);
  MetricsReport m = MetricsReport::from_scores(content_consistency(hyps, refs), acc.acc);
  m.n_items = outputs.size();
  m.invalid_items = acc.invalid + failed;
  return m;
}

TargetRun run_target(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src, Variant variant,
                     double fraction, std::uint64_t seed) {
  TargetRun run;
  const OracleJudge judge(suite.target_spec);
  if (variant == Variant::baseline) {
    const StyleCorpus few = sample_few_shot(suite.target.train, fraction, seed);
    const StyleEntry pt = baseline_prompt(cfg, suite, src.model, few, seed);
    run.outputs = batch_infer(src.model, baseline_pool(cfg, few.task_id, pt.prompt), few.task_id, suite.target.test,
                              inference_options(cfg, PipelineSwitches{}, seed, nullptr));
  } else {
    const PipelineSwitches sw = switches_for(variant);
    TransferStage transfer = run_transfer(cfg, suite, src, sw, fraction, seed);
    TargetStage target = run_target_training(cfg, suite, src.model, transfer, sw, seed);
    const SoftPrompt* prefix = transfer.interpolated ? &*transfer.interpolated : nullptr;
    run.outputs = batch_infer(target.model, target.pool, transfer.few_shot.task_id, suite.target.test,
                              inference_options(cfg, sw, seed, prefix));
    run.transfer = std::move(transfer.report);
  }
  run.report = score_outputs(run.outputs, judge);
  run.report.seeds = {seed};
  run.report.config_hash = cfg.hash();
  run.report.protocol = fraction >= 1.0 ? "full" : "few_shot";
  run.report.variant = std::string(to_string(variant));
  run.report.fraction = fraction;
  return run;
}

MetricsReport run_experiment(const Protocol& protocol, const WorkspaceConfig& cfg, const SuiteData& suite,
                             const SourceArtifacts& src) {
  if (protocol.kind == Protocol::Kind::ablation &&
      std::find(ablation_variants().begin(), ablation_variants().end(), protocol.variant) == ablation_variants().end()) {
    throw Error(ErrorKind::invalid_argument,
                "ablation protocol needs an ablation variant, got '" + std::string(to_string(protocol.variant)) + "'");
  }
  if (protocol.seeds == 0) throw Error(ErrorKind::invalid_argument, "protocol needs at least one seed");
  const double fraction = protocol.kind == Protocol::Kind::full ? 1.0 : protocol.fraction;
  const std::size_t seeds = protocol.kind == Protocol::Kind::full ? 1 : protocol.seeds;
  const Variant variant = protocol.kind == Protocol::Kind::few_shot ? Variant::full : protocol.variant;
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::invalid_argument, "fraction must lie in (0, 1]");
  std::vector<MetricsReport> runs;
  for (std::uint64_t s = 0; s < seeds; ++s) runs.push_back(run_target(cfg, suite, src, variant, fraction, s).report);
  if (runs.size() == 1) return runs.front();
  MetricsReport mean = average_reports(runs);
  mean.protocol = protocol.kind == Protocol::Kind::ablation ? "ablation" : "few_shot";
  return mean;
}

std::vector<SweepRow> run_sweep(const WorkspaceConfig& cfg, const SuiteData& suite, const SourceArtifacts& src,
                                const std::vector<double>& fractions, std::size_t seeds,
                                const std::vector<Variant>& variants) {
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    for (std::uint64_t s = 0; s < seeds; ++s) {
      for (Variant v : variants) rows.push_back({f, s, v, run_target(cfg, suite, src, v, f, s).report});
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "method,fraction,seed,cc,acc,g\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << r.fraction << ',' << r.seed << ',' << r.report.cc << ',' << r.report.acc
        << ',' << r.report.g << '\n';
  }
}

}  // namespace settp
