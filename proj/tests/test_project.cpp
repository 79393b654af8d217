#include <doctest.h>

#include <fstream>
#include <sstream>

#include "netsurgeon/error.hpp"
#include "netsurgeon/project.hpp"
#include "netsurgeon/serialize.hpp"
#include "sample_project.hpp"
#include "test_util.hpp"

using namespace netsurgeon;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("empty project round trip") {
  test_util::TempDir dir;
  Project p;
  p.id = "empty";
  save_project(p, dir.path / "p.json");
  const auto loaded = load_project(dir.path / "p.json");
  CHECK(loaded.project == p);
  CHECK(loaded.warnings.empty());
}

TEST_CASE("project with every entity type round trips exactly") {
  test_util::TempDir dir;
  const auto p = test_util::sample_project();
  save_project(p, dir.path / "p.json");
  const auto loaded = load_project(dir.path / "p.json");
  CHECK(loaded.project == p);
  const auto& c = loaded.project.concept_filter("concept-1");
  REQUIRE(c.realized);
  CHECK(c.realized->weights == p.concept_filter("concept-1").realized->weights);
  CHECK(c.realized->bias == p.concept_filter("concept-1").realized->bias);
  CHECK(c.basis == loaded.project.embedding("emb-1"));  // shared, not copied
  CHECK(loaded.project.concept_filter("concept-2").basis->parametric ==
        p.concept_filter("concept-2").basis->parametric);
  // Saving again yields the same bytes.
  save_project(loaded.project, dir.path / "q.json");
  CHECK(slurp(dir.path / "p.json") == slurp(dir.path / "q.json"));
  // The loaded concepts score identically.
  std::vector<double> x(9, 0.25);
  for (std::size_t i = 0; i < p.concepts.size(); ++i)
    CHECK(concept_score(loaded.project.concepts[i], x) == concept_score(p.concepts[i], x));
}

TEST_CASE("project lookups and registry") {
  const auto p = test_util::sample_project();
  CHECK(p.grammar("grammar-1").parts.size() == 4);
  CHECK(p.concept_registry().size() == 3);
  CHECK(code_of([&] { p.grammar("nope"); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { p.concept_filter("nope"); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { p.embedding("nope"); }) == ErrorCode::NotFound);
}

TEST_CASE("a bumped format version is rejected") {
  test_util::TempDir dir;
  auto doc = project_to_json(test_util::sample_project());
  doc["format_version"] = kProjectFormatVersion + 1;
  write_json_file(dir.path / "p.json", doc);
  CHECK(code_of([&] { load_project(dir.path / "p.json"); }) == ErrorCode::VersionMismatch);
  doc.erase("format_version");
  CHECK(code_of([&] { project_from_json(doc, "doc"); }) == ErrorCode::VersionMismatch);
}

TEST_CASE("a different network marks concepts stale") {
  test_util::TempDir dir;
  const auto p = test_util::sample_project();
  save_project(p, dir.path / "p.json");
  const auto same = load_project(dir.path / "p.json", network_hash(test_util::fixture().network));
  CHECK(same.warnings.empty());
  for (const auto& c : same.project.concepts) CHECK_FALSE(c.stale);
  const auto other = load_project(dir.path / "p.json", network_hash(test_util::small_net(1)));
  CHECK(other.warnings.size() == 1);
  for (const auto& c : other.project.concepts) CHECK(c.stale);
  // Staleness survives a round trip.
  save_project(other.project, dir.path / "q.json");
  for (const auto& c : load_project(dir.path / "q.json").project.concepts) CHECK(c.stale);
}

TEST_CASE("malformed project files") {
  test_util::TempDir dir;
  CHECK(code_of([&] { load_project(dir.path / "missing.json"); }) == ErrorCode::Io);
  std::ofstream(dir.path / "bad.json") << "{ not json";
  CHECK(code_of([&] { load_project(dir.path / "bad.json"); }) == ErrorCode::Format);

  auto doc = project_to_json(test_util::sample_project());
  auto dangling = doc;
  dangling["concepts"][0]["embedding_id"] = "emb-404";
  CHECK(code_of([&] { project_from_json(dangling, "doc"); }) == ErrorCode::Format);
  auto duplicate = doc;
  duplicate["grammars"][1]["id"] = duplicate["grammars"][0]["id"];
  CHECK(code_of([&] { project_from_json(duplicate, "doc"); }) == ErrorCode::Format);
  auto unknown_concept = doc;
  unknown_concept["grammars"][1]["parts"][3]["source"]["concept"] = "concept-404";
  CHECK(code_of([&] { project_from_json(unknown_concept, "doc"); }) == ErrorCode::Format);
  auto cyclic = doc;
  cyclic["grammars"][0]["edges"] = {{"h", "v"}, {"v", "h"}};
  CHECK_THROWS_AS(project_from_json(cyclic, "doc"), Error);
  auto wrong_type = doc;
  wrong_type["grammars"][0]["parts"] = 3;
  CHECK(code_of([&] { project_from_json(wrong_type, "doc"); }) == ErrorCode::Format);
}

TEST_CASE("concept files bundle their basis") {
  test_util::TempDir dir;
  const auto p = test_util::sample_project();
  for (const auto& c : p.concepts) {
    save_concept_file(dir.path / "c.json", c);
    const auto back = load_concept_file(dir.path / "c.json");
    CHECK(back == c);
    CHECK(*back.basis == *c.basis);
  }
  auto doc = read_json_file(dir.path / "c.json");
  doc["embedding"]["id"] = "other";
  write_json_file(dir.path / "c.json", doc);
  CHECK(code_of([&] { load_concept_file(dir.path / "c.json"); }) == ErrorCode::Format);
}

TEST_CASE("grammar and detection JSON shapes") {
  const auto p = test_util::sample_project();
  const Json g = p.grammars[1];
  CHECK(g["root_size"] == Json::array({fixture::kRootSize, fixture::kRootSize}));
  CHECK(g["edges"] == Json({{"c", "h"}}));
  CHECK(g.get<PLCGrammar>() == p.grammars[1]);

  Detection d;
  d.image_id = "x";
  d.box = {1, 2, 3, 4};
  d.root = {0, 2, 3, 5};
  d.score = 0.1;
  d.scale = 0.5;
  d.parts = {{"h", 1.5, 2.5, 0.75}};
  const Json dj = d;
  CHECK(dj.get<Detection>() == d);

  DetectOptions o;
  o.threshold = 0.25;
  o.model = ScoringModel::Bag;
  const Json oj = o;
  const auto back = oj.get<DetectOptions>();
  CHECK(back.threshold == 0.25);
  CHECK(back.model == ScoringModel::Bag);
  CHECK(Json::object().get<DetectOptions>().num_scales == kDefaultPyramidScales);
}

TEST_CASE("reals survive a text round trip bit for bit") {
  EmbeddingBasis b;
  b.id = "r";
  b.mean = {0.1, 1.0 / 3.0, 1e-300, -2.5e-17, 123456789.123456789};
  b.v1 = {std::nextafter(1.0, 2.0), 0, 0, 0, 0};
  b.v2 = {0, 0, 0, 0, 1};
  const Json j = b;
  CHECK(parse_json(j.dump(), "r").get<EmbeddingBasis>() == b);
  CHECK(code_of([] { parse_json("[1,", "x"); }) == ErrorCode::Format);
}
