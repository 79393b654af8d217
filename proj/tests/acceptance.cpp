// Acceptance suite: one PASS/FAIL line per criterion, each with its time budget.
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "netsurgeon/dataset.hpp"
#include "netsurgeon/embedding.hpp"
#include "netsurgeon/fixture.hpp"
#include "netsurgeon/geometry.hpp"
#include "netsurgeon/metrics.hpp"
#include "netsurgeon/network.hpp"
#include "netsurgeon/project.hpp"
#include "netsurgeon/serialize.hpp"
#include "netsurgeon/tsne.hpp"
#include "oracles.hpp"
#include "plc_oracle.hpp"
#include "sample_project.hpp"
#include "test_util.hpp"

using namespace netsurgeon;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::vector<std::vector<double>> gaussian(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                          double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& r : out)
    for (double& v : r) v = g(rng);
  return out;
}

Outcome dp_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto inst = oracle::random_plc_instance(rng, 8, 4);
    const auto dp = dp_score(inst.grammar, inst.maps);
    worst = std::max(worst, oracle::plc_max_error(dp.root, oracle::plc_enumerate(inst.grammar, inst.maps)));
  }
  return {worst <= 1e-6, fmt::format("100 instances, max error {:.3g}", worst)};
}

Outcome conv_pool_oracle() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> kernel(1, 5), stride(1, 3), pad(0, 2), channels(1, 4),
      side(6, 14);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int k = kernel(rng), s = stride(rng), p = std::min(pad(rng), k - 1);
    const int in_c = channels(rng), h = std::max(side(rng), k), w = std::max(side(rng), k);
    const Tensor in = oracle::random_tensor(rng, {in_c, h, w});
    LayerSpec layer;
    if (t % 2 == 0) {
      const int out_c = channels(rng);
      layer = make_conv("c", in_c, out_c, {k, k + (t % 3 == 0)}, {s, s}, {p, p},
                        oracle::random_vector(rng, static_cast<std::size_t>(out_c) * in_c * k * (k + (t % 3 == 0))),
                        oracle::random_vector(rng, out_c));
      if (w < k + 1) continue;
      worst = std::max(worst, oracle::max_abs_diff(apply_layer(layer, in), oracle::conv_triple_loop(in, layer)));
    } else {
      layer = make_maxpool("p", {k, k}, {s, s}, {p / 2, p / 2});
      worst = std::max(worst, oracle::max_abs_diff(apply_layer(layer, in), oracle::pool_triple_loop(in, layer)));
    }
  }
  return {worst <= 1e-6, fmt::format("200 layers, max error {:.3g}", worst)};
}

Outcome receptive_fields() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> layers(1, 3), kernel(1, 4), stride(1, 2), pad(0, 1);
  std::uniform_real_distribution<float> positive(0.1f, 1.0f);
  int checked = 0, failures = 0;
  while (checked < 50) {
    NetworkSpec net;
    net.input_shape = {1, 18, 18};
    const int n = layers(rng);
    int rows = 18;
    for (int i = 0; i < n; ++i) {
      const int k = kernel(rng), s = stride(rng), p = std::min(pad(rng), k - 1);
      const std::string name = fmt::format("l{}", i);
      if (i % 2 == 0) {
        std::vector<float> wts(static_cast<std::size_t>(k) * k);
        for (float& v : wts) v = positive(rng);
        net.layers.push_back(make_conv(name, 1, 1, {k, k}, {s, s}, {p, p}, wts, {0.0f}));
      } else {
        net.layers.push_back(make_maxpool(name, {k, k}, {s, s}, {p / 2, p / 2}));
      }
      rows = (rows + 2 * (i % 2 == 0 ? p : p / 2) - k) / s + 1;
    }
    if (rows < 1) continue;
    ++checked;
    const Tensor image = oracle::random_tensor(rng, {1, 18, 18}, 0.0f, 1.0f);
    const std::size_t top = net.layers.size() - 1;
    const int row = std::uniform_int_distribution<int>(0, rows - 1)(rng);
    const int col = std::uniform_int_distribution<int>(0, rows - 1)(rng);
    const auto changed = oracle::perturbation_set(net, image, top, row, col);
    const auto rect = rf_rect(layer_geometry(net), net.layers[top].name, {row, col}, {18, 18});
    bool ok = !changed.empty();
    int min_y = 1 << 20, min_x = 1 << 20, max_y = -1, max_x = -1;
    for (auto [y, x] : changed) {
      ok = ok && rect.contains(y, x);
      min_y = std::min(min_y, y), min_x = std::min(min_x, x);
      max_y = std::max(max_y, y), max_x = std::max(max_x, x);
    }
    ok = ok && min_y == rect.y0 && min_x == rect.x0 && max_y == rect.y1 - 1 && max_x == rect.x1 - 1;
    failures += !ok;
  }
  return {failures == 0, fmt::format("{} stacks, {} mismatched", checked, failures)};
}

Outcome back_projection() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(2, 24);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto d = static_cast<std::size_t>(dim(rng));
    auto basis = std::make_shared<const EmbeddingBasis>(pca_fit(gaussian(rng, 40, d), t));
    auto cf = backproject_boundary(basis, {u(rng), u(rng), u(rng)});
    const auto x = gaussian(rng, 1, d, 3.0)[0];
    const double reconstructed = concept_score(cf, x);
    cf.mode = ConceptMode::ProjectedSpace;
    const double projected = concept_score(cf, x);
    worst = std::max(worst, std::abs(reconstructed - projected) / std::max(1.0, std::abs(projected)));
  }
  return {worst <= 1e-6, fmt::format("100 triples, max error {:.3g}", worst)};
}

Outcome pca_subspace() {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t d : {3u, 8u, 20u, 35u, 50u}) {
    for (int rep = 0; rep < 2; ++rep, ++cases) {
      // Anisotropic Gaussian under a random rotation: a clear gap after the second axis.
      auto x = gaussian(rng, 120, d);
      const auto mix = gaussian(rng, d, d);
      for (auto& row : x) {
        std::vector<double> y(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
          const double scale = i == 0 ? 6.0 : i == 1 ? 3.5 : 1.0 / (1.0 + i);
          for (std::size_t k = 0; k < d; ++k) y[k] += row[i] * scale * mix[i][k];
        }
        row = y;
      }
      const auto b = pca_fit(x, rep);
      const auto eig = oracle::jacobi_eigen(oracle::covariance(x));
      worst = std::max(worst, oracle::max_principal_angle(b.v1, b.v2, eig.vectors[0], eig.vectors[1]));
    }
  }
  return {worst < 1e-4, fmt::format("{} data sets up to 50-d, max principal angle {:.3g} rad", cases, worst)};
}

Outcome tsne_clusters() {
  std::mt19937_64 rng(60);
  auto x = gaussian(rng, 60, 10);
  for (int i = 30; i < 60; ++i) x[i][0] += 20.0;
  TsneOptions options;
  options.perplexity = 10.0;
  options.seed = 60;
  const auto result = tsne_fit(x, options);
  // 2-means on the embedding, seeded with the two mutually farthest points.
  const auto& c = result.coords;
  std::size_t a = 0, b = 0;
  double far = -1.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const double dd = std::hypot(c[i][0] - c[j][0], c[i][1] - c[j][1]);
      if (dd > far) far = dd, a = i, b = j;
    }
  std::array<std::array<double, 2>, 2> centre{c[a], c[b]};
  std::vector<int> label(c.size());
  for (int iter = 0; iter < 50; ++iter) {
    std::array<std::array<double, 2>, 2> sum{};
    std::array<int, 2> count{};
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double d0 = std::hypot(c[i][0] - centre[0][0], c[i][1] - centre[0][1]);
      const double d1 = std::hypot(c[i][0] - centre[1][0], c[i][1] - centre[1][1]);
      label[i] = d1 < d0;
      sum[label[i]][0] += c[i][0];
      sum[label[i]][1] += c[i][1];
      ++count[label[i]];
    }
    for (int k = 0; k < 2; ++k)
      if (count[k]) centre[k] = {sum[k][0] / count[k], sum[k][1] / count[k]};
  }
  int majority = 0;
  for (int k = 0; k < 2; ++k) {
    int first = 0, second = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (label[i] == k) (i < 30 ? first : second)++;
    majority += std::max(first, second);
  }
  const double purity = majority / 60.0;
  const auto& kl = result.kl_history;
  int rises = 0;
  for (std::size_t i = kl.size() - 100; i < kl.size(); ++i) rises += kl[i] > kl[i - 1];
  return {purity == 1.0 && rises == 0 && kl.size() >= 101,
          fmt::format("purity {:.3f}, KL {:.4f} -> {:.4f}, {} rises in last 100 iterations", purity,
                      kl[kl.size() - 101], kl.back(), rises)};
}

Outcome metrics_suite() {
  auto det = [](std::string image, double score, Box box) {
    Detection d;
    d.image_id = std::move(image);
    d.score = score;
    d.box = d.root = box;
    return d;
  };
  auto gt = [](std::string image, Box box) { return GroundTruthBox{std::move(image), "thing", box, {}, false}; };
  int failed = 0;
  auto expect = [&](bool c) { failed += !c; };
  expect(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  expect(iou({0, 0, 10, 10}, {10, 0, 20, 10}) == 0.0);
  expect(iou({0, 0, 10, 10}, {5, 0, 15, 10}) == 50.0 / 150.0);
  expect(iou({0, 0, 4, 4}, {1, 1, 3, 3}) == 4.0 / 16.0);
  const std::vector<GroundTruthBox> one{gt("a", {0, 0, 10, 10})};
  expect(average_precision(std::vector<Detection>{det("a", 0.9, {0, 0, 10, 6}), det("a", 0.8, {50, 50, 60, 60})}, one, 0.5) == 1.0);
  expect(average_precision(std::vector<Detection>{det("a", 0.9, {50, 50, 60, 60}), det("a", 0.8, {0, 0, 10, 10})}, one, 0.5) == 0.5);
  expect(average_precision(std::vector<Detection>{}, one, 0.5) == 0.0);
  const std::vector<GroundTruthBox> two{gt("a", {0, 0, 10, 10}), gt("b", {0, 0, 10, 10})};
  expect(std::abs(average_precision(std::vector<Detection>{det("a", 0.9, {0, 0, 10, 10}), det("a", 0.8, {30, 30, 40, 40}),
                                                           det("b", 0.7, {0, 0, 10, 10})},
                                    two, 0.5) -
                  (1.0 + 2.0 / 3.0) / 2.0) < 1e-15);
  // A duplicate of a matched detection is a false positive.
  expect(average_precision(std::vector<Detection>{det("a", 0.9, {0, 0, 10, 10}), det("a", 0.8, {0, 0, 10, 10})}, one, 0.5) == 1.0);
  expect(average_precision(std::vector<Detection>{det("a", 0.9, {0, 0, 10, 10}), det("a", 0.8, {0, 0, 10, 10}),
                                                  det("b", 0.7, {0, 0, 10, 10})},
                           two, 0.5) == (1.0 + 2.0 / 3.0) / 2.0);
  const bool alternating[10] = {true, false, true, false, true, false, true, false, true, false};
  expect(precision_at_k(alternating, 10) == 0.5);
  expect(precision_at_k(alternating, 3) == 2.0 / 3.0);
  expect(precision_at_k(alternating, 1) == 1.0);
  const int hand_failures = failed;

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 60), score(0, 1);
  std::uniform_int_distribution<int> image(0, 4);
  int random_failures = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<GroundTruthBox> truth;
    for (int i = 0; i < 8; ++i) {
      const double x = u(rng), y = u(rng);
      truth.push_back(gt("i" + std::to_string(image(rng)), {x, y, x + 12, y + 12}));
    }
    std::vector<Detection> dets;
    for (int i = 0; i < 15; ++i) {
      const double x = u(rng), y = u(rng);
      dets.push_back(det("i" + std::to_string(image(rng)), score(rng), {x, y, x + 12, y + 12}));
    }
    for (const auto& g : truth) dets.push_back(det(g.image_id, score(rng), g.box));
    const double ap = average_precision(dets, truth, 0.5);
    auto transformed = dets;
    for (auto& d : transformed) d.score = std::exp(3 * d.score) - 7;
    random_failures += average_precision(transformed, truth, 0.5) != ap;
    for (auto& d : transformed) d.score = -1.0 / (1.0 + d.score + 8);
    random_failures += average_precision(transformed, truth, 0.5) != ap;
  }
  return {hand_failures == 0 && random_failures == 0,
          fmt::format("{} hand cases failed, {} of 200 transformed rankings differ", hand_failures,
                      random_failures)};
}

Outcome fixture_trend() {
  // End to end through the emitted files: write, read back, detect, score.
  test_util::TempDir dir;
  fixture::write(fixture::make(), dir.path);
  const auto images = load_images(ingest_dataset(dir.path / "images"));
  const auto negatives = load_images(ingest_dataset(dir.path / "negatives"));
  const auto truth = load_ground_truth(dir.path / "gt.txt");
  const auto negative_truth = load_ground_truth(dir.path / "negatives_gt.txt");
  const NetworkSpec net = load_network(dir.path / "network.json");
  auto ap = [&](const std::string& grammar_file, const std::vector<ImageRecord>& imgs,
                const std::vector<GroundTruthBox>& gt) {
    const auto file = load_grammar_file(dir.path / grammar_file);
    return average_precision(detect_all(net, file.grammar, {}, imgs, file.detection), gt, 0.5);
  };
  const double spatial = ap("fixture.grammar", images, truth);
  const double bag = ap("bag.grammar", images, truth);
  const double single = std::max(ap("single_h.grammar", images, truth), ap("single_v.grammar", images, truth));
  const double without = ap("fixture.grammar", negatives, negative_truth);
  const double with = ap("negative.grammar", negatives, negative_truth);
  const bool ok = images.size() >= 50 && spatial >= 0.9 && spatial > bag && bag > single && with > without;
  return {ok, fmt::format("{} images; AP spatial {:.3f} > bag {:.3f} > best single {:.3f}; "
                          "negative part {:.3f} -> {:.3f}",
                          images.size(), spatial, bag, single, without, with)};
}

Outcome project_persistence() {
  test_util::TempDir dir;
  const Project p = test_util::sample_project();
  save_project(p, dir.path / "project.json");
  const auto loaded = load_project(dir.path / "project.json", network_hash(test_util::fixture().network));
  const bool every_type = !p.datasets.empty() && !p.embeddings.empty() && !p.concepts.empty() && !p.grammars.empty();
  return {every_type && loaded.project == p && loaded.warnings.empty(),
          fmt::format("{} datasets, {} embeddings, {} concepts, {} grammars", p.datasets.size(),
                      p.embeddings.size(), p.concepts.size(), p.grammars.size())};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"dp-oracle", 10, dp_oracle},
      {"conv-pool-oracle", 10, conv_pool_oracle},
      {"receptive-field", 30, receptive_fields},
      {"back-projection", 5, back_projection},
      {"pca-subspace", 5, pca_subspace},
      {"tsne-clusters", 60, tsne_clusters},
      {"metrics", 5, metrics_suite},
      {"fixture-trend", 120, fixture_trend},
      {"project-persistence", 2, project_persistence},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, fmt::format("threw: {}", e.what())};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = out.ok && seconds < c.budget_s;
    failures += !pass;
    fmt::print("{} {}: {} [{:.2f} s / {:.0f} s]\n", pass ? "PASS" : "FAIL", c.name, out.detail, seconds,
               c.budget_s);
  }
  return failures == 0 ? 0 : 1;
}
