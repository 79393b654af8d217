#include <doctest.h>

#include <fstream>
#include <sstream>

#include "netsurgeon/cli.hpp"
#include "netsurgeon/dataset.hpp"
#include "netsurgeon/embedding.hpp"
#include "netsurgeon/error.hpp"
#include "netsurgeon/image.hpp"
#include "netsurgeon/serialize.hpp"
#include "netsurgeon/stats_store.hpp"
#include "test_util.hpp"

using namespace netsurgeon;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "netsurgeon");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// The fixture as written by the CLI, once per process.
const std::filesystem::path& cli_fixture() {
  static test_util::TempDir dir;
  static const bool written = [] {
    const auto r = run({"fixture", "--out", dir.path.string()});
    REQUIRE(r.code == 0);
    return true;
  }();
  (void)written;
  return dir.path;
}

std::vector<ImageRecord> fixture_images() {
  return load_images(ingest_dataset(cli_fixture() / "images"));
}

}  // namespace

TEST_CASE("help and usage errors") {
  for (const char* sub : {"mine", "search", "embed", "concept", "grammar", "detect", "eval",
                          "fixture", "serve"}) {
    const auto r = run({sub, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const auto unknown = run({"mine", "--network", "n.json", "--images", "d", "--neuron", "a:0",
                            "--bogus"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("error:") == 0);
  CHECK(run({"mine", "--network", "n.json"}).code == 2);            // missing required
  CHECK(run({"mine", "--network", "n.json", "--images", "d", "--neuron", "a:0", "--n", "0"})
            .code == 2);                                              // bad value
  CHECK(run({"embed", "--network", "n.json", "--images", "d", "--neuron", "a:0", "--out",
             "e.json"})
            .code == 2);                                              // --seed is required
}

TEST_CASE("domain errors exit 1") {
  const auto dir = cli_fixture();
  const auto missing = run({"mine", "--network", (dir / "nope.json").string(), "--images",
                            (dir / "images").string(), "--neuron", "conv1:0"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error: io_error") == 0);
  const auto unknown = run({"mine", "--network", (dir / "network.json").string(), "--images",
                            (dir / "images").string(), "--neuron", "conv9:0"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("not_found") != std::string::npos);
  CHECK(run({"search", "--network", (dir / "network.json").string(), "--neuron", "conv1:0"})
            .code == 1);
  CHECK(run({"eval", "--detections", (dir / "perfect.det").string(), "--gt",
             (dir / "missing.txt").string()})
            .code == 1);
}

TEST_CASE("the CLI fixture equals the library fixture") {
  const auto dir = cli_fixture();
  const auto& fx = test_util::fixture();
  CHECK(load_network(dir / "network.json") == fx.network);
  CHECK(slurp(dir / "gt.txt") == format_ground_truth(fx.data.truth));
  CHECK(read_png(dir / "probe.png") == fx.probe);
}

TEST_CASE("mine prints what the library mines") {
  const auto dir = cli_fixture();
  const auto& fx = test_util::fixture();
  test_util::TempDir tmp;
  const auto r = run({"mine", "--network", (dir / "network.json").string(), "--images",
                      (dir / "images").string(), "--neuron", "conv2:4", "--n", "7",
                      "--save-stats", (tmp.path / "stats.bin").string()});
  REQUIRE(r.code == 0);
  const auto images = fixture_images();
  const auto expected = mine_top_activations(fx.network, images, {"conv2", 4}, 7);
  CHECK(r.out == format_patches(expected));
  const auto store = StatsStore::load(tmp.path / "stats.bin");
  CHECK(store.top({"conv2", 4}, 7) == expected);
}

TEST_CASE("search prints the library ranking") {
  const auto dir = cli_fixture();
  const auto& fx = test_util::fixture();
  const auto net = (dir / "network.json").string();
  auto r = run({"search", "--network", net, "--neuron", "conv2:4", "--direction", "inputs"});
  REQUIRE(r.code == 0);
  CHECK(r.out == format_ranked(weight_search(fx.network, {"conv2", 4}, SearchDirection::Inputs)));
  r = run({"search", "--network", net, "--neuron", "conv1:0", "--direction", "consumers"});
  REQUIRE(r.code == 0);
  CHECK(r.out ==
        format_ranked(weight_search(fx.network, {"conv1", 0}, SearchDirection::Consumers)));
  r = run({"search", "--network", net, "--neuron", "conv2:0", "--direction", "cooccurrence",
           "--images", (dir / "images").string(), "--top-k", "20"});
  REQUIRE(r.code == 0);
  CHECK(r.out == format_ranked(cooccurrence_search(fx.network, fixture_images(), {"conv2", 0}, 20)));
  CHECK(run({"search", "--network", net, "--neuron", "conv2:4", "--direction", "sideways"}).code ==
        2);
}

TEST_CASE("embed, concept and grammar files chain into detection") {
  const auto dir = cli_fixture();
  const auto& fx = test_util::fixture();
  test_util::TempDir tmp;
  const auto emb_path = tmp.path / "emb.json";
  const auto r = run({"embed", "--network", (dir / "network.json").string(), "--images",
                      (dir / "images").string(), "--neuron", "conv1:0", "--n", "30", "--seed",
                      "5", "--out", emb_path.string()});
  REQUIRE(r.code == 0);
  EmbeddingRequest request;
  request.neuron = {"conv1", 0};
  request.n = 30;
  request.seed = 5;
  auto expected = fit_embedding(fx.network, fixture_images(), request);
  expected.basis.id = "emb";
  CHECK(r.out == format_points(expected.basis));
  const auto basis = read_json_file(emb_path).get<EmbeddingBasis>();
  CHECK(basis == expected.basis);

  // The concept uses the filter's own line, so it reproduces the unit.
  REQUIRE(expected.line);
  write_json_file(tmp.path / "coeffs.json", {{"alpha1", expected.line->normal1},
                                             {"alpha2", expected.line->normal2},
                                             {"beta", expected.line->offset},
                                             {"name", "horizontal"}});
  const auto concept_path = tmp.path / "horizontal.json";
  const auto c = run({"concept", "--embedding", emb_path.string(), "--coefficients",
                      (tmp.path / "coeffs.json").string(), "--out", concept_path.string()});
  REQUIRE(c.code == 0);
  const auto cf = load_concept_file(concept_path);
  CHECK(cf.id == "horizontal");
  CHECK(cf.name == "horizontal");
  CHECK(c.out == concept_to_json(cf).dump(2) + "\n");

  PLCGrammar spec = fx.data.grammar;
  spec.parts[0].source.kind = PartSource::Kind::Concept;
  spec.parts[0].source.concept_id = "horizontal";
  write_json_file(tmp.path / "spec.json", {{"grammar", spec}, {"detection", fx.data.detection}});
  const auto grammar_path = tmp.path / "g.grammar";
  // The concept file is required to validate the part.
  CHECK(run({"grammar", "--spec", (tmp.path / "spec.json").string(), "--out",
             grammar_path.string()})
            .code == 1);
  const auto g = run({"grammar", "--spec", (tmp.path / "spec.json").string(), "--out",
                      grammar_path.string(), "--network", (dir / "network.json").string(),
                      "--concept", concept_path.string()});
  REQUIRE(g.code == 0);
  const auto file = load_grammar_file(grammar_path);
  CHECK(std::filesystem::weakly_canonical(file.network) ==
        std::filesystem::weakly_canonical(dir / "network.json"));

  const auto d = run({"detect", "--grammar", grammar_path.string(), "--concept",
                      concept_path.string(), "--image", (dir / "probe.png").string()});
  REQUIRE(d.code == 0);
  const auto dets = parse_detections(d.out);
  REQUIRE_FALSE(dets.empty());
  CHECK(dets[0].box == fx.data.probe_box);
  // Without the concept file the grammar cannot run.
  CHECK(run({"detect", "--grammar", grammar_path.string(), "--image",
             (dir / "probe.png").string()})
            .code == 1);
}

TEST_CASE("detect reports the planted object and matches the library") {
  const auto dir = cli_fixture();
  const auto& fx = test_util::fixture();
  const auto r = run({"detect", "--grammar", (dir / "fixture.grammar").string(), "--image",
                      (dir / "probe.png").string()});
  REQUIRE(r.code == 0);
  const auto dets = parse_detections(r.out);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].image_id == "probe");
  CHECK(dets[0].box == fx.data.probe_box);
  const ImageRecord probe{"probe", fx.probe};
  CHECK(r.out == format_detections(detect_all(fx.network, fx.data.grammar, {},
                                              std::span(&probe, 1), fx.data.detection)));

  const auto all = run({"detect", "--grammar", (dir / "fixture.grammar").string(), "--images",
                        (dir / "images").string(), "--threshold", "0.5", "--scales", "3"});
  REQUIRE(all.code == 0);
  DetectOptions options = fx.data.detection;
  options.threshold = 0.5;
  options.num_scales = 3;
  CHECK(all.out == format_detections(detect_all(fx.network, fx.data.grammar, {},
                                                fixture_images(), options)));
  CHECK(run({"detect", "--grammar", (dir / "fixture.grammar").string()}).code == 2);
}

TEST_CASE("eval scores detection files") {
  const auto dir = cli_fixture();
  const auto r = run({"eval", "--detections", (dir / "perfect.det").string(), "--gt",
                      (dir / "gt.txt").string(), "--iou", "0.5", "0.8"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("model ap@0.5 ap@0.8\nperfect 1.000000 1.000000\n") == 0);

  test_util::TempDir tmp;
  const auto det = run({"detect", "--grammar", (dir / "fixture.grammar").string(), "--images",
                        (dir / "images").string()});
  REQUIRE(det.code == 0);
  std::ofstream(tmp.path / "spatial.det") << det.out;
  const auto both = run({"eval", "--detections", (dir / "perfect.det").string(),
                         (tmp.path / "spatial.det").string(), "--gt", (dir / "gt.txt").string()});
  REQUIRE(both.code == 0);
  const std::vector<double> thresholds{0.5};
  const auto report = evaluate_models(
      {{"perfect", parse_detections(slurp(dir / "perfect.det"))},
       {"spatial", parse_detections(det.out)}},
      load_ground_truth(dir / "gt.txt"), thresholds);
  CHECK(both.out == format_report(report));
}
