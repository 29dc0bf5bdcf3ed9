#include <doctest.h>

#include <fstream>
#include <set>

#include "settp/error.hpp"
#include "settp/experiment.hpp"
#include "smoke_config.hpp"
#include "test_helpers.hpp"

using namespace settp;

namespace {

struct SmokeWorld {
  WorkspaceConfig cfg;
  SuiteData suite;
  SourceArtifacts src;
};

const SmokeWorld& world() {
  static const SmokeWorld w = [] {
    auto cfg = testing_support::smoke_config();
    auto suite = generate_suite(cfg);
    auto src = build_source_artifacts(cfg, suite);
    return SmokeWorld{cfg, std::move(suite), std::move(src)};
  }();
  return w;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : {Variant::full, Variant::baseline, Variant::wo_aar, Variant::wo_style, Variant::wo_dt,
                    Variant::wo_pi, Variant::wo_cluster}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("wo_everything"), Error);
  CHECK(ablation_variants().size() == 5);
}

TEST_CASE("each ablation switches off exactly its own component") {
  const auto full = switches_for(Variant::full);
  const std::vector<std::string> expected{"aar", "style", "dt", "pi", "cluster"};
  for (std::size_t i = 0; i < ablation_variants().size(); ++i) {
    const auto diff = switch_diff(full, switches_for(ablation_variants()[i]));
    CHECK(diff == std::vector<std::string>{expected[i]});
  }
  CHECK(switch_diff(full, full).empty());
  CHECK_THROWS_AS(switches_for(Variant::baseline), Error);
}

TEST_CASE("suite layout") {
  const auto& w = world();
  REQUIRE(w.suite.sources.size() == 3);
  for (const auto& s : w.suite.sources) {
    CHECK(s.total() == 60);
    CHECK(s.train.vocab == suite_vocabulary(w.suite));
  }
  CHECK(w.suite.target.train.size() == 100);
  CHECK(w.suite.target.validation.size() == 10);
  CHECK(w.suite.target.test.size() == 10);
  std::set<TokenSeq> pool;
  for (const auto& p : w.suite.target.train.pairs) pool.insert(p.source);
  const StyleOracle oracle(w.suite.target_spec);
  for (const auto& p : w.suite.target.test.pairs) CHECK(oracle.accepts(p.target));
}

TEST_CASE("source artifacts: one style prompt per task, clustered and flat instance pools") {
  const auto& w = world();
  CHECK(w.src.style_pool.size() == 3);
  CHECK(w.src.assignments.size() == 3);
  for (const auto& t : w.cfg.sources) {
    CHECK(w.src.style_pool.contains(t.spec.name));
    CHECK(w.src.flat_pool.entries_for(t.spec.name).size() == 1);
    CHECK(w.src.instance_pool.entries_for(t.spec.name).size() == w.cfg.source_clusters.clusters_for(48));
  }
  CHECK(w.src.backbone_log.epochs_run == w.cfg.pretrain.epochs);
}

TEST_CASE("transfer stage honours the switches") {
  const auto& w = world();
  const auto full = run_transfer(w.cfg, w.suite, w.src, switches_for(Variant::full), 0.1, 0);
  CHECK(full.few_shot.size() == 10);
  REQUIRE(full.target_prompt.has_value());
  REQUIRE(full.interpolated.has_value());
  CHECK(full.report.key_losses.size() == w.cfg.keys.steps);
  CHECK(full.report.scores.s.size() == 3);

  const auto no_aar = run_transfer(w.cfg, w.suite, w.src, switches_for(Variant::wo_aar), 0.1, 0);
  CHECK(no_aar.report.lambda == 0.0);
  CHECK(no_aar.interpolated->matrix == no_aar.target_prompt->matrix);
  CHECK(no_aar.target_prompt->matrix == full.target_prompt->matrix);

  const auto no_style = run_transfer(w.cfg, w.suite, w.src, switches_for(Variant::wo_style), 0.1, 0);
  CHECK_FALSE(no_style.target_prompt.has_value());
  CHECK_FALSE(no_style.interpolated.has_value());

  const auto no_dt = run_transfer(w.cfg, w.suite, w.src, switches_for(Variant::wo_dt), 0.1, 0);
  for (double x : no_dt.report.temps.w) CHECK(x == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("target runs are deterministic and produce valid reports") {
  const auto& w = world();
  for (Variant v : {Variant::baseline, Variant::full, Variant::wo_pi}) {
    const auto a = run_target(w.cfg, w.suite, w.src, v, 0.1, 1);
    const auto b = run_target(w.cfg, w.suite, w.src, v, 0.1, 1);
    REQUIRE(a.outputs.size() == w.suite.target.test.size());
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      CHECK(a.outputs[i].output == b.outputs[i].output);
      CHECK(a.outputs[i].error.empty());
    }
    validate_metrics_report(a.report.to_json());
    CHECK(a.report.variant == to_string(v));
    CHECK(a.report.config_hash == w.cfg.hash());
    CHECK(a.report.n_items == w.suite.target.test.size());
  }
}

TEST_CASE("protocols and sweep output") {
  const auto& w = world();
  Protocol p;
  p.kind = Protocol::Kind::few_shot;
  p.fraction = 0.1;
  p.seeds = 2;
  const auto mean = run_experiment(p, w.cfg, w.suite, w.src);
  CHECK(mean.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(mean.g_run_mean.has_value());
  validate_metrics_report(mean.to_json());

  p.kind = Protocol::Kind::ablation;
  p.variant = Variant::full;
  CHECK_THROWS_AS(run_experiment(p, w.cfg, w.suite, w.src), Error);

  const auto rows = run_sweep(w.cfg, w.suite, w.src, {0.1}, 1, {Variant::baseline, Variant::full});
  REQUIRE(rows.size() == 2);
  const auto path = testing_support::scratch_path("sweep.csv");
  write_sweep_csv(rows, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "method,fraction,seed,cc,acc,g");
  std::getline(in, line);
  CHECK(line.rfind("baseline,0.1,0,", 0) == 0);
}
