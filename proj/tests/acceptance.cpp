// Acceptance checks, one PASS/FAIL line each.
//   acceptance <reference-config> <settp-cli> [--only name]

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "settp/clustering.hpp"
#include "settp/evaluation.hpp"
#include "settp/experiment.hpp"
#include "settp/prompt_store.hpp"
#include "settp/training.hpp"
#include "settp/transfer.hpp"
#include "test_helpers.hpp"

using namespace settp;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::vector<double> normal_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

InstanceEntry make_entry(std::vector<double> centroid, const std::vector<double>& prompt_row, std::size_t k) {
  InstanceEntry e;
  e.centroid.values = std::move(centroid);
  Matrix m(2, prompt_row.size());
  for (std::size_t j = 0; j < prompt_row.size(); ++j) {
    m(0, j) = prompt_row[j] + 0.5;
    m(1, j) = prompt_row[j] - 0.5;
  }
  e.prompt = SoftPrompt{m, "e" + std::to_string(k)};
  e.cluster_index = k;
  return e;
}

QueryVector as_query(std::vector<double> v) { return QueryVector{std::move(v), QueryVector::Origin::source, 0}; }

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

Outcome mechanism_identities() {
  Outcome o;
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pt = random_prompt(4, 6, 1000 + trial), p1 = random_prompt(4, 6, 2000 + trial),
               p2 = random_prompt(4, 6, 3000 + trial);
    const RetrievalScores s{{0.3, 0.7}, {0.0, 0.0}};
    o.require(interpolate_prompt(pt, {&p1, &p2}, s, 0.0).matrix == pt.matrix, "lambda 0 changed the target prompt");

    const auto single = retrieval_scores({as_query(normal_vec(rng, 6))}, as_query(normal_vec(rng, 6)),
                                         {normal_vec(rng, 6)}, uniform_temperature(1));
    o.require(single.s == std::vector<double>{1.0}, "N=1 retrieval score is not 1");

    const std::size_t n = 2 + rng() % 5;
    std::vector<QueryVector> qs;
    std::vector<std::vector<double>> keys;
    DomainTemperatures temps{std::vector<double>(n), std::vector<std::size_t>(n, 0)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      qs.push_back(as_query(normal_vec(rng, 6)));
      keys.push_back(normal_vec(rng, 6));
      temps.w[k] = u(rng);
    }
    const auto r = retrieval_scores(qs, as_query(normal_vec(rng, 6)), keys, temps);
    o.require(std::abs(sum(r.s) - 1.0) < 1e-9, "retrieval scores do not sum to 1");

    std::vector<std::vector<InstanceEntry>> store(n + 1);
    for (auto& dom : store) {
      const std::size_t size = 1 + rng() % 4;
      for (std::size_t k = 0; k < size; ++k) dom.push_back(make_entry(normal_vec(rng, 3), normal_vec(rng, 3), k));
    }
    std::vector<InstanceSet> sources;
    for (std::size_t d = 0; d < n; ++d) {
      sources.emplace_back();
      for (const auto& e : store[d]) sources.back().push_back(&e);
    }
    InstanceSet target;
    for (const auto& e : store[n]) target.push_back(&e);
    const auto dt = domain_temperature(sources, target, -1.0 + 2.0 * u(rng), -1.0 + 2.0 * u(rng));
    o.require(std::abs(sum(dt.w) - 1.0) < 1e-9, "domain temperatures do not sum to 1");
  }
  o.detail = o.pass ? "50 random cases" : o.detail;
  return o;
}

StyleCorpus small_corpus() {
  StyleCorpus c;
  c.task_id = "toy";
  c.vocab = tiny_vocab();
  c.pairs = {{{"a", "b"}, {"a", "c"}}, {{"b", "b", "d"}, {"c", "c", "d"}}, {{"d", "a"}, {"d", "a"}},
             {{"a", "d", "b"}, {"a", "d", "c"}}, {{"b"}, {"c"}}, {{"d", "d", "a"}, {"d", "d", "a"}}};
  return c;
}

Outcome freeze_contracts() {
  Outcome o;
  const Backbone model(tiny_vocab(), tiny_config(21));
  const StyleCorpus corpus = small_corpus();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.lr_prompt = 1e-2;
  cfg.lr_model = 1e-2;
  cfg.optimizer = OptimizerKind::adam;
  const std::string digest = model.digest();

  const StyleEntry style = pretrain_style_prompt(model, corpus, cfg, 3);
  o.require(model.digest() == digest, "style prompt training touched the model");

  const ClusterAssignment assignment = cluster_contents(model, corpus, 2);
  o.require(model.digest() == digest, "clustering touched the model");
  const auto instances = pretrain_instance_prompts(model, corpus, assignment, cfg, 3);
  o.require(model.digest() == digest, "instance prompt training touched the model");
  o.require(instances.size() == 2, "expected two instance prompts");

  const SoftPrompt frozen = style.prompt;
  const Backbone tuned = tune_target(model, &style.prompt, corpus, cfg);
  o.require(style.prompt.matrix == frozen.matrix, "target tuning touched the prompt");
  o.require(model.digest() == digest, "target tuning touched the source model");
  o.require(tuned.digest() != digest, "target tuning did not move the model");
  if (o.pass) o.detail = "style, instance and target stages";
  return o;
}

Outcome gradient_check() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Backbone model(tiny_vocab(), tiny_config(seed + 30));
    auto prompt = random_prompt(3, 8, seed + 40);
    const std::vector<StyledPair> batch{{{"a", "b", "c"}, {"c", "d"}}, {{"d", "a"}, {"b", "b", "c"}}};
    const auto analytic = model.gradients(&prompt, batch, true, false);
    const Matrix fd = oracle::central_difference(
        prompt.matrix, [&] { return oracle::mean_nll(model, &prompt, batch); }, 1e-4);
    worst = std::max(worst, oracle::max_relative_error(analytic.prompt, fd));
  }
  o.require(worst < 1e-3, "max relative error " + std::to_string(worst));
  if (o.pass) o.detail = "max relative error " + std::to_string(worst);
  return o;
}

double brute_force_two_way(const Matrix& w) {
  const std::size_t n = w.rows();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 2; mask + 1 < (std::size_t{1} << n); mask += 2) {
    double cut = 0.0, w0 = 0.0, w1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const bool si = (mask >> i) & 1u, sj = (mask >> j) & 1u;
        if (si != sj) cut += w(i, j);
        else if (si) w1 += w(i, j);
        else w0 += w(i, j);
      }
    }
    best = std::min(best, (cut / 2.0) / w0 + (cut / 2.0) / w1);
  }
  return best;
}

Outcome oracle_equivalences() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t e = 1 + rng() % 6, n = 1 + rng() % 12;
    const bool grid = trial % 2 == 1;
    auto draw = [&] { return grid ? static_cast<double>(rng() % 3) : g(rng); };
    InstancePromptPool pool(PoolDims{1, e, e});
    std::vector<std::vector<double>> cents;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> c(e);
      for (auto& v : c) v = draw();
      cents.push_back(c);
      InstanceEntry ie;
      ie.prompt = init_prompt(1, e, k, "ins-" + std::to_string(k));
      ie.centroid.values = c;
      ie.cluster_index = k;
      pool.add("t", ie);
    }
    ContentVector q{std::vector<double>(e)};
    for (auto& v : q.values) v = draw();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < e; ++j) d += (cents[k][j] - q.values[j]) * (cents[k][j] - q.values[j]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    o.require(nearest_instance(pool, q, "t").cluster_index == best, "nearest instance case " + std::to_string(trial));
  }

  std::mt19937_64 grng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + grng() % 8;
    std::vector<ContentVector> pts;
    for (std::size_t i = 0; i < n; ++i) {
      ContentVector v{std::vector<double>(4)};
      for (auto& x : v.values) x = g(grng) * (1.0 + trial % 3);
      pts.push_back(v);
    }
    const auto graph = build_affinity(pts);
    const auto a = minmax_cut_partition(graph, 2);
    const double want = brute_force_two_way(graph.weights);
    o.require(std::abs(a.objective - want) <= 1e-9 * std::max(1.0, want), "min-max cut graph " + std::to_string(trial));
  }

  std::size_t beams = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Backbone model(tiny_vocab(), tiny_config(seed));
    const auto prompt = random_prompt(2, 8, seed + 50);
    for (std::size_t width : {1u, 2u, 3u, 5u}) {
      for (std::size_t max_len : {2u, 3u, 4u}) {
        const auto got = beam_decode(model, &prompt, {"c", "a"}, {.beam_width = width, .max_len = max_len});
        bool finished = false;
        const auto want = oracle::frontier_search(model, &prompt, {"c", "a"}, width, max_len, &finished);
        auto ids = want.ids;
        if (finished) ids.pop_back();
        o.require(got.ids == ids && got.finished == finished &&
                      std::abs(got.logprob - want.score) <= 1e-9 * std::max(1.0, std::abs(want.score)),
                  "beam seed " + std::to_string(seed) + " width " + std::to_string(width));
        ++beams;
      }
    }
  }
  if (o.pass) o.detail = "200 nearest, 20 cut, " + std::to_string(beams) + " beam cases";
  return o;
}

Outcome algorithm_hand_trace() {
  Outcome o;
  const InstanceEntry a0 = make_entry({1, 0, 0}, {1, 0, 0}, 0);
  const InstanceEntry a1 = make_entry({1, 1, 0}, {1, 1, 0}, 1);
  const InstanceEntry b0 = make_entry({0, 0, 1}, {0, 0, 1}, 0);
  const InstanceEntry t0 = make_entry({1, 0.1, 0}, {1, 0.05, 0}, 0);
  const InstanceEntry t1 = make_entry({1, 0.9, 0.1}, {0.9, 1, 0}, 1);
  const InstanceEntry t2 = make_entry({0.1, 0, 1}, {0, 0.2, 1}, 2);
  const auto temps = domain_temperature({{&a0, &a1}, {&b0}}, {&t0, &t1, &t2}, 0.8, 0.8);
  o.require(temps.votes == std::vector<std::size_t>{2, 1}, "votes are not (2, 1)");
  const double z = 1.0 + std::exp(-1.0);
  const double wa = 1.0 / z, wb = std::exp(-1.0) / z;
  const double err = std::max(std::abs(temps.w.at(0) - wa), std::abs(temps.w.at(1) - wb));
  o.require(err <= 2 * std::numeric_limits<double>::epsilon(), "w differs from softmax((2,1)) by " + std::to_string(err));
  if (o.pass) {
    std::ostringstream s;
    s.precision(17);
    s << "w = (" << temps.w[0] << ", " << temps.w[1] << ")";
    o.detail = s.str();
  }
  return o;
}

std::vector<TokenSeq> toks(const std::vector<std::string>& lines) {
  std::vector<TokenSeq> out;
  for (const auto& l : lines) {
    std::istringstream in(l);
    TokenSeq t;
    for (std::string w; in >> w;) t.push_back(w);
    out.push_back(t);
  }
  return out;
}

Outcome metric_checks() {
  Outcome o;
  const auto a = corpus_bleu(toks({"the good pizza please .", "a bad train ticket !", "the hotel was nice"}),
                             toks({"the good pizza .", "a bad train ticket was late !", "the nice hotel"}));
  o.require(std::abs(a.score - 50.197242487957936) < 0.1, "BLEU fixture 1 gave " + std::to_string(a.score));
  const auto b = corpus_bleu(toks({"the good pizza", "a bad"}), toks({"the good pizza was very nice .", "a bad one"}));
  o.require(std::abs(b.score - 36.78794411714425) < 0.1, "BLEU fixture 2 gave " + std::to_string(b.score));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double cc = u(rng), acc = u(rng);
    const auto r = MetricsReport::from_scores(cc, acc);
    o.require(std::abs(r.g * r.g - cc * acc) < 1e-9, "G^2 != CC*ACC");
  }
  const auto in = toks({"a fresh pizza soup .", "the train was late", "x"});
  o.require(std::abs(content_consistency(in, in) - 100.0) < 1e-9, "identity CC is not 100");
  if (o.pass) o.detail = "BLEU " + std::to_string(a.score) + ", " + std::to_string(b.score);
  return o;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome directional_replication(const fs::path& config_path) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const WorkspaceConfig cfg = load_config(config_path);
  const SuiteData suite = generate_suite(cfg);
  const SourceArtifacts src = build_source_artifacts(cfg, suite);
  std::vector<Variant> variants{Variant::baseline, Variant::full};
  for (Variant v : ablation_variants()) variants.push_back(v);
  const auto rows = run_sweep(cfg, suite, src, cfg.fractions, cfg.seeds, variants);

  std::map<std::string, std::vector<MetricsReport>> overall;
  std::map<std::pair<double, std::string>, std::vector<MetricsReport>> per;
  for (const auto& r : rows) {
    overall[std::string(to_string(r.variant))].push_back(r.report);
    per[{r.fraction, std::string(to_string(r.variant))}].push_back(r.report);
  }
  std::ostringstream s;
  s.precision(4);
  for (double f : cfg.fractions) {
    const double full = average_reports(per[{f, "full"}]).g, base = average_reports(per[{f, "baseline"}]).g;
    s << "f=" << f << " full " << full << " > baseline " << base << "; ";
    o.require(full > base, "full does not beat the baseline at fraction " + std::to_string(f));
  }
  const double full = average_reports(overall["full"]).g;
  std::string worst;
  double worst_drop = -std::numeric_limits<double>::infinity();
  bool tie = false;
  for (Variant v : ablation_variants()) {
    const std::string name(to_string(v));
    const double drop = full - average_reports(overall[name]).g;
    s << name << " drop " << drop << "; ";
    if (drop > worst_drop) {
      worst_drop = drop;
      worst = name;
      tie = false;
    } else if (drop == worst_drop) {
      tie = true;
    }
  }
  o.require(worst == "wo_style" && !tie, "largest drop is " + worst);
  const double elapsed = seconds_since(t0);
  o.require(elapsed <= 1800.0, "took " + std::to_string(elapsed) + " s");
  o.detail = o.pass ? s.str() : o.detail + " [" + s.str() + "]";
  return o;
}

int run_command(const std::string& cmd, std::string* out) {
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return -1;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), p) != nullptr) out->append(buf.data());
  const int status = pclose(p);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end(const fs::path& config_path, const fs::path& cli) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path ws = scratch_path("acceptance_ws");
  fs::remove_all(ws);
  const std::string base = cli.string() + " -w " + ws.string() + " ";
  const std::vector<std::string> steps{"gen-data --config " + config_path.string(), "pretrain-source", "build-pools",
                                       "transfer", "train-target", "infer", "evaluate"};
  std::string last;
  for (const auto& step : steps) {
    last.clear();
    const int code = run_command(base + step + " 2>&1", &last);
    o.require(code == 0, "`settp " + step + "` exited " + std::to_string(code) + ": " + last);
    if (!o.pass) break;
  }
  if (o.pass) {
    try {
      const auto record = nlohmann::json::parse(last);
      validate_metrics_report(record.at("metrics"));
      const auto r = MetricsReport::from_json(record.at("metrics"));
      std::ostringstream s;
      s.precision(4);
      s << "G " << r.g << " (CC " << r.cc << ", ACC " << r.acc << ")";
      o.detail = s.str();
    } catch (const std::exception& e) {
      o.require(false, std::string("report rejected: ") + e.what());
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed <= 600.0, "took " + std::to_string(elapsed) + " s");
  fs::remove_all(ws);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <reference-config> <settp-cli> [--only name]\n";
    return 2;
  }
  const fs::path config = argv[1], cli = argv[2];
  const std::string only = argc > 4 && std::string(argv[3]) == "--only" ? argv[4] : "";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"mechanism_identities", mechanism_identities},
      {"freeze_contracts", freeze_contracts},
      {"gradient_check", gradient_check},
      {"oracle_equivalences", oracle_equivalences},
      {"domain_temperature_hand_trace", algorithm_hand_trace},
      {"metric_checks", metric_checks},
      {"end_to_end_smoke", [&] { return end_to_end(config, cli); }},
      {"directional_replication", [&] { return directional_replication(config); }},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    if (!only.empty() && name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s (%.1f s) %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
