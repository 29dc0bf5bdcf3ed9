#include <doctest.h>

#include <fstream>

#include "settp/config.hpp"
#include "settp/error.hpp"
#include "smoke_config.hpp"
#include "test_helpers.hpp"

using namespace settp;
using testing_support::scratch_path;

TEST_CASE("config round-trips through JSON and disk") {
  const auto c = testing_support::smoke_config();
  const auto back = WorkspaceConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());

  const auto path = scratch_path("config.json");
  save_config(c, path);
  CHECK(load_config(path).hash() == c.hash());
}

TEST_CASE("config hash tracks content") {
  auto a = WorkspaceConfig::defaults();
  auto b = a;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  b.lambda = 0.25;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("config rejects bad schema versions and dimension mismatches") {
  auto j = nlohmann::json(WorkspaceConfig::defaults().to_json());
  j["schema_version"] = 99;
  try {
    WorkspaceConfig::from_json(j);
    FAIL("expected a schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    CHECK(std::string(e.what()).find("99") != std::string::npos);
  }
  j = WorkspaceConfig::defaults().to_json();
  j["dims"]["e"] = 7;
  CHECK_THROWS_AS(WorkspaceConfig::from_json(j), Error);
  j = WorkspaceConfig::defaults().to_json();
  j["dims"]["d"] = 7;
  CHECK_THROWS_AS(WorkspaceConfig::from_json(j), Error);
  j = WorkspaceConfig::defaults().to_json();
  j["clusters"]["source"] = "many";
  CHECK_THROWS_AS(WorkspaceConfig::from_json(j), Error);
  CHECK_THROWS_AS(load_config(scratch_path("no_such_config.json")), Error);

  const auto bad = scratch_path("bad_config.json");
  std::ofstream(bad) << "{ not json";
  CHECK_THROWS_AS(load_config(bad), Error);
}

TEST_CASE("config validation") {
  auto c = WorkspaceConfig::defaults();
  c.validate();
  c.lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = WorkspaceConfig::defaults();
  c.sources.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = WorkspaceConfig::defaults();
  c.fractions = {0.0};
  CHECK_THROWS_AS(c.validate(), Error);
  c = WorkspaceConfig::defaults();
  c.backbone.heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("cluster policy") {
  CHECK(ClusterPolicy{}.clusters_for(400) == 6);
  CHECK(ClusterPolicy{}.clusters_for(10) == 2);
  CHECK(ClusterPolicy{}.clusters_for(1) == 1);
  CHECK(ClusterPolicy{4}.clusters_for(3) == 3);
  CHECK(ClusterPolicy{4}.clusters_for(100) == 4);
  CHECK_THROWS_AS(ClusterPolicy{}.clusters_for(0), Error);
}
