#include <doctest.h>
#include <httplib.h>

#include <fmt/format.h>

#include <array>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "netsurgeon/error.hpp"
#include "netsurgeon/image.hpp"
#include "netsurgeon/service.hpp"
#include "test_util.hpp"

using namespace netsurgeon;

namespace {

ServiceConfig fixture_config() {
  ServiceConfig config;
  config.data_root = test_util::fixture_dir();
  config.port = 0;
  return config;
}

/// A server for `wb` on an ephemeral loopback port, stopped on destruction.
struct LiveServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  explicit LiveServer(Workbench& wb) {
    register_routes(server, wb);
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(120, 0);
    return c;
  }
};

Json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return Json::parse(r->body);
}

httplib::Result post(httplib::Client& c, const std::string& path, const Json& body) {
  return c.Post(path, body.dump(), "application/json");
}

Tensor decode(const std::string& bytes) {
  test_util::TempDir dir;
  std::ofstream(dir.path / "x.png", std::ios::binary) << bytes;
  return read_png(dir.path / "x.png");
}

Json wait_for_job(httplib::Client& c, const std::string& id) {
  for (int i = 0; i < 6000; ++i) {
    const Json j = body_of(c.Get("/api/v1/jobs/" + id));
    if (j["status"] == "done" || j["status"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("health and unknown routes") {
  Workbench wb(fixture_config());
  LiveServer live(wb);
  auto c = live.client();
  for (const char* path : {"/health", "/api/v1/health"}) {
    const auto r = c.Get(path);
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(Json::parse(r->body)["status"] == "ok");
  }
  const auto r = c.Get("/api/v1/nothing-here");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(Json::parse(r->body)["error"]["code"] == "not_found");
}

TEST_CASE("errors map to HTTP status codes with a code in the body") {
  Workbench wb(fixture_config());
  LiveServer live(wb);
  auto c = live.client();
  auto expect = [&](const httplib::Result& r, int status, const std::string& code) {
    REQUIRE(r);
    CHECK(r->status == status);
    CHECK(Json::parse(r->body)["error"]["code"] == code);
  };
  expect(post(c, "/api/v1/detect", {{"grammar_id", "grammar-404"}, {"image_id", "x"}}), 404,
         "not_found");
  expect(c.Post("/api/v1/networks", "{ not json", "application/json"), 400, "format_error");
  expect(post(c, "/api/v1/networks", Json::object()), 400, "invalid_argument");
  expect(post(c, "/api/v1/networks", {{"manifest_path", 3}}), 400, "invalid_argument");
  expect(post(c, "/api/v1/networks", {{"manifest_path", "missing.json"}}), 500, "io_error");
  expect(c.Get("/api/v1/jobs/job-404"), 404, "not_found");
  expect(c.Get("/api/v1/blobs/00ff"), 404, "not_found");

  // A project written by a newer version is a conflict.
  test_util::TempDir dir;
  Json doc = wb.project_json();
  doc["format_version"] = doc["format_version"].get<int>() + 1;
  write_json_file(dir.path / "p.json", doc);
  expect(post(c, "/api/v1/projects/load", {{"path", (dir.path / "p.json").string()}}), 409,
         "version_mismatch");

  REQUIRE(post(c, "/api/v1/networks", {{"manifest_path", "network.json"}})->status == 200);
  expect(post(c, "/api/v1/search/weights", {{"neuron", "conv1:0"}, {"direction", "inputs"}}),
         400, "invalid_argument");
  // A one-image dataset yields too few patches to embed.
  REQUIRE(post(c, "/api/v1/datasets", {{"directory", "."}})->status == 200);
  expect(post(c, "/api/v1/embeddings", {{"neuron", "conv1:0"}, {"n", 10}}), 422, "degenerate");
  expect(c.Get("/api/v1/neurons/conv9/0/top"), 404, "not_found");
  expect(c.Get("/api/v1/neurons/conv1/0/top?n=zero"), 400, "invalid_argument");
}

TEST_CASE("the scripted loop finds the planted object") {
  const auto& fx = test_util::fixture();
  Workbench wb(fixture_config());
  LiveServer live(wb);
  auto c = live.client();

  const Json net = body_of(post(c, "/api/v1/networks", {{"manifest_path", "network.json"}}));
  CHECK(net["network_id"] == hash_hex(network_hash(fx.network)));
  const Json train = body_of(post(c, "/api/v1/datasets", {{"directory", "images"}}));
  CHECK(train["image_count"] == fx.data.images.size());
  const Json probe_set = body_of(post(c, "/api/v1/datasets", {{"directory", "."}}));
  REQUIRE(probe_set["images"] == Json::array({"probe"}));
  const std::string train_id = train["dataset_id"], probe_id = probe_set["dataset_id"];

  // Mine the horizontal unit: every thumbnail decodes to its patch rect.
  const Json top = body_of(
      c.Get(fmt::format("/api/v1/neurons/conv1/{}/top?n=6&dataset={}", fixture::kHorizontal,
                        train_id)));
  REQUIRE(top["patches"].size() == 6);
  for (const auto& p : top["patches"]) {
    const auto rect = p["rect"].get<std::array<int, 4>>();
    const std::string url = p["thumbnail"];
    const auto blob = c.Get(url);
    REQUIRE(blob);
    CHECK(blob->status == 200);
    CHECK(blob->get_header_value("Content-Type") == "image/png");
    const Tensor t = decode(blob->body);
    CHECK(t.height() == rect[3] - rect[1]);
    CHECK(t.width() == rect[2] - rect[0]);
  }

  // Embed the same unit; its own filter gives the boundary of a concept.
  const Json emb = body_of(post(c, "/api/v1/embeddings",
                                {{"neuron", "conv1:0"}, {"method", "pca"}, {"n", 40},
                                 {"seed", 3}, {"dataset", train_id}}));
  CHECK(emb["points"].size() == 40);
  REQUIRE(emb["filter_line"].is_object());
  const Json concept_reply = body_of(post(c, "/api/v1/concepts",
                                          {{"embedding_id", emb["embedding_id"]},
                                           {"alpha1", emb["filter_line"]["alpha1"]},
                                           {"alpha2", emb["filter_line"]["alpha2"]},
                                           {"beta", emb["filter_line"]["beta"]},
                                           {"name", "horizontal"}}));
  const std::string concept_id = concept_reply["concept_id"];
  CHECK(concept_reply["classification"].size() == 40);

  const Json heat = body_of(c.Get(fmt::format("/api/v1/concepts/{}/heatmap?image=probe&dataset={}",
                                              concept_id, probe_id)));
  CHECK(heat["rows"].get<int>() <= 128);
  CHECK(heat["cols"].get<int>() <= 128);
  CHECK(heat["values"].size() == heat["rows"].get<std::size_t>() * heat["cols"].get<std::size_t>());
  CHECK(heat["max"].get<double>() > 0.0);

  // The two-part grammar detects exactly the planted box.
  const Json g = body_of(post(c, "/api/v1/grammars", {{"grammar", fx.data.grammar}}));
  const std::string grammar_id = g["grammar_id"];
  CHECK(body_of(c.Get("/api/v1/grammars/" + grammar_id))["parts"].size() == 2);
  Json request = fx.data.detection;
  request["grammar_id"] = grammar_id;
  request["image_id"] = "probe";
  request["dataset_id"] = probe_id;
  const auto r = post(c, "/api/v1/detect", request);
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto dets = Json::parse(r->body)["detections"].get<std::vector<Detection>>();
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].box == fx.data.probe_box);
  CHECK(dets[0].image_id == "probe");

  // Replacing the horizontal neuron by its concept keeps the detection.
  PLCGrammar with_concept = fx.data.grammar;
  with_concept.parts[0].source.kind = PartSource::Kind::Concept;
  with_concept.parts[0].source.concept_id = concept_id;
  const Json g2 = body_of(post(c, "/api/v1/grammars", Json(with_concept)));
  request["grammar_id"] = g2["grammar_id"];
  const auto dets2 =
      body_of(post(c, "/api/v1/detect", request))["detections"].get<std::vector<Detection>>();
  REQUIRE_FALSE(dets2.empty());
  CHECK(dets2[0].box == fx.data.probe_box);

  // The project now holds everything the loop created.
  const Json project = body_of(c.Get("/api/v1/projects/current"));
  CHECK(project["embeddings"].size() == 1);
  CHECK(project["concepts"].size() == 1);
  CHECK(project["grammars"].size() == 2);
  CHECK(project["datasets"].size() == 2);
}

TEST_CASE("large requests run as jobs") {
  const auto& fx = test_util::fixture();
  auto config = fixture_config();
  config.sync_threshold = 0;
  Workbench wb(config);
  LiveServer live(wb);
  auto c = live.client();
  REQUIRE(post(c, "/api/v1/networks", {{"manifest_path", "network.json"}})->status == 200);
  const Json ds = body_of(post(c, "/api/v1/datasets", {{"directory", "images"}}));
  const std::string grammar_id =
      body_of(post(c, "/api/v1/grammars", Json(fx.data.grammar)))["grammar_id"];

  Json request = fx.data.detection;
  request["grammar_id"] = grammar_id;
  const auto accepted = post(c, "/api/v1/detect", request);
  REQUIRE(accepted);
  CHECK(accepted->status == 202);
  const Json job = wait_for_job(c, Json::parse(accepted->body)["job_id"]);
  REQUIRE(job["status"] == "done");
  CHECK(job["kind"] == "detect");
  CHECK(job["progress"] == 1.0);
  // The job computes what the synchronous path computes.
  request["async"] = false;
  const auto sync = post(c, "/api/v1/detect", request);
  REQUIRE(sync);
  CHECK(sync->status == 200);
  CHECK(Json::parse(sync->body)["text"] == job["result"]["text"]);

  Json eval = fx.data.detection;
  eval["grammar_id"] = grammar_id;
  eval["gt_path"] = "gt.txt";
  eval["iou_thresholds"] = {0.5, 0.8};
  const auto eval_accepted = post(c, "/api/v1/evaluate", eval);
  REQUIRE(eval_accepted);
  CHECK(eval_accepted->status == 202);
  const Json eval_job = wait_for_job(c, Json::parse(eval_accepted->body)["job_id"]);
  REQUIRE(eval_job["status"] == "done");
  CHECK(eval_job["result"]["table"].get<std::string>().find(grammar_id) != std::string::npos);

  // Failures inside a job are reported on the job.
  Json bad = eval;
  bad["gt_path"] = "missing.txt";
  const Json failed = wait_for_job(c, body_of(post(c, "/api/v1/evaluate", bad))["job_id"]);
  CHECK(failed["status"] == "failed");
  CHECK(failed["error"]["code"] == "io_error");

  const auto emb = post(c, "/api/v1/embeddings",
                        {{"neuron", "conv1:1"}, {"n", 20}, {"seed", 1}, {"dataset", ds["dataset_id"]}});
  REQUIRE(emb);
  CHECK(emb->status == 202);
  const Json emb_job = wait_for_job(c, Json::parse(emb->body)["job_id"]);
  REQUIRE(emb_job["status"] == "done");
  CHECK(emb_job["result"]["points"].size() == 20);
}

TEST_CASE("projects can be replaced, saved and reloaded") {
  const auto& fx = test_util::fixture();
  test_util::TempDir dir;
  Json saved;
  {
    Workbench wb(fixture_config());
    wb.add_network({{"manifest_path", "network.json"}});
    wb.add_dataset({{"directory", "images"}});
    wb.create_grammar(Json(fx.data.grammar));
    const Json emb = wb.create_embedding({{"neuron", "conv2:6"}, {"n", 20}, {"seed", 2}}).body;
    wb.create_concept({{"embedding_id", emb["embedding_id"]}, {"alpha1", 1.0}, {"alpha2", 0.0},
                       {"beta", 0.0}});
    wb.save_project({{"path", (dir.path / "p.json").string()}});
    saved = wb.project_json();

    const Json fresh = wb.new_project({{"id", "fresh"}});
    CHECK(fresh["id"] == "fresh");
    CHECK(fresh["grammars"].empty());
    CHECK(fresh["datasets"].size() == 1);  // inputs stay loaded
    CHECK(wb.create_grammar(Json(fx.data.grammar))["grammar_id"] == "grammar-1");
  }
  // A new service reopens the network and dataset from the project alone.
  Workbench wb(fixture_config());
  const Json loaded = wb.load_project({{"path", (dir.path / "p.json").string()}});
  CHECK(loaded["warnings"].empty());
  CHECK(wb.project_json() == saved);
  // New ids continue after the loaded ones.
  CHECK(wb.create_grammar(Json(fx.data.grammar))["grammar_id"] == "grammar-2");
  Json request = fx.data.detection;
  request["grammar_id"] = "grammar-1";
  const Json dets = wb.detect(request).body;
  CHECK_FALSE(dets["detections"].empty());
}

TEST_CASE("a concept on another network is stale") {
  const auto& fx = test_util::fixture();
  test_util::TempDir dir;
  save_network(test_util::small_net(3), dir.path / "other.json", "other.bin");
  Workbench wb(fixture_config());
  wb.add_network({{"manifest_path", "network.json"}});
  const std::string probe_set = wb.add_dataset({{"directory", "."}})["dataset_id"];
  const std::string train_set = wb.add_dataset({{"directory", "images"}})["dataset_id"];
  const Json emb = wb.create_embedding({{"neuron", "conv1:0"}, {"n", 4}, {"seed", 2},
                                        {"dataset", train_set}}).body;
  const std::string id = wb.create_concept({{"embedding_id", emb["embedding_id"]},
                                            {"alpha1", 1.0}, {"alpha2", 0.0}, {"beta", 0.0}})["concept_id"];
  CHECK_NOTHROW(wb.concept_heatmap(id, "probe", probe_set));
  const Json swapped = wb.add_network({{"manifest_path", (dir.path / "other.json").string()}});
  CHECK(swapped["warnings"].size() == 1);
  try {
    wb.concept_heatmap(id, "probe", probe_set);
    FAIL("expected a stale error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Stale);
  }
  PLCGrammar g = fx.data.grammar;
  g.parts[0].source.kind = PartSource::Kind::Concept;
  g.parts[0].source.concept_id = id;
  g.parts[1].source.neuron = {"conv1", 0};
  CHECK_THROWS_AS(wb.create_grammar(Json(g)), Error);
}

TEST_CASE("service configuration and environment") {
  test_util::TempDir dir;
  write_json_file(dir.path / "service.json",
                  {{"port", 9123}, {"data_root", "data"}, {"max_jobs", 3}, {"jobs", 2}});
  auto config = load_service_config(dir.path / "service.json");
  CHECK(config.port == 9123);
  CHECK(config.data_root == dir.path / "data");
  CHECK(config.max_jobs == 3);
  CHECK(config.jobs == 2);
  CHECK(config.host == "127.0.0.1");
  CHECK(config.sync_threshold == 64);

  ::setenv("NETSURGEON_PORT", "9200", 1);
  ::setenv("NETSURGEON_DATA_ROOT", "/srv/data", 1);
  apply_environment(config);
  CHECK(config.port == 9200);
  CHECK(config.data_root == "/srv/data");
  ::setenv("NETSURGEON_PORT", "http", 1);
  CHECK_THROWS_AS(apply_environment(config), Error);
  ::unsetenv("NETSURGEON_PORT");
  ::unsetenv("NETSURGEON_DATA_ROOT");

  write_json_file(dir.path / "bad.json", {{"port", 70000}});
  CHECK_THROWS_AS(load_service_config(dir.path / "bad.json"), Error);
  write_json_file(dir.path / "bad.json", {{"max_jobs", 0}});
  CHECK_THROWS_AS(load_service_config(dir.path / "bad.json"), Error);
  write_json_file(dir.path / "bad.json", {{"port", "eighty"}});
  CHECK_THROWS_AS(load_service_config(dir.path / "bad.json"), Error);
}

TEST_CASE("patch thumbnails are crops of the patch rect") {
  Tensor image({1, 6, 7});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) image.at(0, y, x) = static_cast<float>(y * 7 + x) / 255.0f;
  const std::vector<ImageRecord> images{{"a", image}};
  std::vector<PatchRef> patches(3);
  for (auto& p : patches) p.image_id = "a";
  patches[0].rect = {2, 3, 3, 4};  // 1x1
  patches[1].rect = {0, 0, 7, 6};  // whole image
  patches[2].rect = {5, 4, 7, 6};  // bottom-right corner
  const auto pngs = render_patch_thumbnails(patches, images);
  REQUIRE(pngs.size() == 3);
  for (std::size_t i = 0; i < pngs.size(); ++i) {
    const Tensor t = decode(std::string(pngs[i].begin(), pngs[i].end()));
    const auto& r = patches[i].rect;
    REQUIRE(t.height() == r.y1 - r.y0);
    REQUIRE(t.width() == r.x1 - r.x0);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        CHECK(t.at(0, y - r.y0, x - r.x0) == doctest::Approx(image.at(0, y, x)).epsilon(1e-6));
  }
  patches[0].image_id = "missing";
  CHECK_THROWS_AS(render_patch_thumbnails(patches, images), Error);
}

TEST_CASE("heatmaps are block-averaged to at most the requested side") {
  Tensor small({1, 3, 5});
  for (int i = 0; i < 15; ++i) small.data()[i] = static_cast<float>(i);
  const auto same = downsample_heatmap(small, 128);
  CHECK(same.rows == 3);
  CHECK(same.cols == 5);
  CHECK(std::equal(same.values.begin(), same.values.end(), small.data().begin()));
  CHECK(same.min == 0.0f);
  CHECK(same.max == 14.0f);

  const auto half = downsample_heatmap(small, 3);
  CHECK(half.rows == 2);
  CHECK(half.cols == 3);
  CHECK(half.source_rows == 3);
  CHECK(half.source_cols == 5);
  CHECK(half.values[0] == doctest::Approx((0 + 1 + 5 + 6) / 4.0));
  CHECK(half.values[2] == doctest::Approx((4 + 9) / 2.0));
  CHECK(half.values[5] == doctest::Approx(14.0));

  Tensor big({1, 300, 129});
  big.data()[0] = -5.0f;
  const auto reduced = downsample_heatmap(big, 128);
  CHECK(reduced.rows <= 128);
  CHECK(reduced.cols <= 128);
  CHECK(reduced.min == -5.0f);
  CHECK(reduced.values[0] == doctest::Approx(-5.0 / 9.0));
  CHECK_THROWS_AS(downsample_heatmap(Tensor({2, 3, 3}), 128), Error);
}
