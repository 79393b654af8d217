#include "netsurgeon/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/serialize.hpp"

namespace netsurgeon::fixture {

namespace {

constexpr int kMargin = 4;
constexpr int kObjects = 30;
constexpr int kLoneBars = 28;
constexpr int kSwapped = 6;
// A distractor bar at least this far (per axis) from both object bars can never share a
// root box with either of them.
constexpr int kFarGap = 28;
constexpr int kNegativeObjects = 20;
constexpr int kConfusers = 20;
constexpr float kNoise = 0.02f;

using Rng = std::mt19937_64;

/// conv1 templates: +0.2 along the bar, -0.1 on both flanks.
std::vector<float> bar_kernel(Orientation o) {
  std::vector<float> k(25, 0.0f);
  auto set = [&](int y, int x, float v) {
    if (y >= 0 && y < 5 && x >= 0 && x < 5) k[y * 5 + x] = v;
  };
  for (int i = 0; i < 5; ++i) {
    switch (o) {
      case kHorizontal:
        set(2, i, 0.2f), set(1, i, -0.1f), set(3, i, -0.1f);
        break;
      case kVertical:
        set(i, 2, 0.2f), set(i, 1, -0.1f), set(i, 3, -0.1f);
        break;
      case kDiagonal:
        set(i, i, 0.2f), set(i, i - 1, -0.1f), set(i, i + 1, -0.1f);
        break;
      case kAntiDiagonal:
        set(i, 4 - i, 0.2f), set(i, 3 - i, -0.1f), set(i, 5 - i, -0.1f);
        break;
    }
  }
  return k;
}

Tensor blank(Rng& rng) {
  std::uniform_real_distribution<float> noise(0.0f, kNoise);
  Tensor image({1, kImageSize, kImageSize});
  for (float& v : image.data()) v = noise(rng);
  return image;
}

void quantise(Tensor& image) {
  for (float& v : image.data()) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

float intensity(Rng& rng) { return std::uniform_real_distribution<float>(0.8f, 1.0f)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

int box_origin(Rng& rng) { return uniform_int(rng, kMargin, kImageSize - kRootSize - kMargin); }

/// A lone bar that cannot share a root box with either bar of the object at (x0, y0).
/// Gives up (drawing nothing) when the image has no room for one.
void draw_far_bar(Tensor& image, Rng& rng, int x0, int y0) {
  const int half = kBarLength / 2;
  const auto orientation = uniform_int(rng, 0, 1) == 0 ? kHorizontal : kVertical;
  const int bars[2][2] = {{x0 + static_cast<int>(kHorizontalAnchorX), y0 + static_cast<int>(kHorizontalAnchorY)},
                          {x0 + static_cast<int>(kVerticalAnchorX), y0 + static_cast<int>(kVerticalAnchorY)}};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int cx = uniform_int(rng, kMargin + half, kImageSize - 1 - kMargin - half);
    const int cy = uniform_int(rng, kMargin + half, kImageSize - 1 - kMargin - half);
    const bool far = std::all_of(std::begin(bars), std::end(bars), [&](const int* b) {
      return std::abs(cx - b[0]) >= kFarGap || std::abs(cy - b[1]) >= kFarGap;
    });
    if (far) {
      draw_bar(image, orientation, cx, cy, intensity(rng));
      return;
    }
  }
}

GroundTruthBox truth_box(const std::string& image_id, int x0, int y0) {
  GroundTruthBox g;
  g.image_id = image_id;
  g.category = kCategory;
  g.box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + kRootSize),
           static_cast<double>(y0 + kRootSize)};
  return g;
}

PartSpec neuron_part(std::string id, std::string layer, int channel, double ax, double ay,
                     double radius, int sign = 1) {
  PartSpec p;
  p.id = std::move(id);
  p.source.kind = PartSource::Kind::Neuron;
  p.source.neuron = {std::move(layer), channel};
  p.anchor_x = ax;
  p.anchor_y = ay;
  p.radius = radius;
  p.sign = sign;
  return p;
}

PartSpec horizontal_part() {
  return neuron_part("h", "conv1", kHorizontal, kHorizontalAnchorX, kHorizontalAnchorY,
                     kPartRadius);
}

PartSpec vertical_part() {
  return neuron_part("v", "conv1", kVertical, kVerticalAnchorX, kVerticalAnchorY, kPartRadius);
}

}  // namespace

NetworkSpec network() {
  std::vector<float> w1;
  for (int o = 0; o < 4; ++o) {
    const auto k = bar_kernel(static_cast<Orientation>(o));
    w1.insert(w1.end(), k.begin(), k.end());
  }
  const std::vector<float> b1(4, -0.15f);

  constexpr int kConv2Out = 7;
  std::vector<float> w2(static_cast<std::size_t>(kConv2Out) * 4 * 9, 0.0f);
  std::vector<float> b2(kConv2Out, 0.0f);
  auto centre = [&](int o, int c, float v) { w2[(o * 4 + c) * 9 + 4] = v; };
  for (int c = 0; c < 4; ++c) centre(c, c, 1.0f);
  centre(kCrossChannel, kHorizontal, 0.5f);
  centre(kCrossChannel, kVertical, 0.5f);
  b2[kCrossChannel] = -0.5f;
  centre(kDiagonalCrossChannel, kDiagonal, 0.5f);
  centre(kDiagonalCrossChannel, kAntiDiagonal, 0.5f);
  b2[kDiagonalCrossChannel] = -0.5f;
  centre(kAnyDiagonalChannel, kDiagonal, 1.0f);
  centre(kAnyDiagonalChannel, kAntiDiagonal, 1.0f);

  NetworkSpec net;
  net.input_shape = {1, kImageSize, kImageSize};
  net.layers.push_back(make_conv("conv1", 1, 4, {5, 5}, {1, 1}, {2, 2}, w1, b1));
  net.layers.push_back(make_relu("relu1"));
  net.layers.push_back(make_maxpool("pool1", {2, 2}, {2, 2}));
  net.layers.push_back(make_conv("conv2", 4, kConv2Out, {3, 3}, {1, 1}, {1, 1}, w2, b2));
  validate(net);
  return net;
}

void draw_bar(Tensor& image, Orientation orientation, int cx, int cy, float value) {
  const int half = kBarLength / 2;
  for (int i = -half; i <= half; ++i) {
    int x = cx, y = cy;
    switch (orientation) {
      case kHorizontal: x += i; break;
      case kVertical: y += i; break;
      case kDiagonal: x += i, y += i; break;
      case kAntiDiagonal: x -= i, y += i; break;
    }
    if (y >= 0 && y < image.height() && x >= 0 && x < image.width()) {
      image.at(0, y, x) = std::max(image.at(0, y, x), value);
    }
  }
}

void draw_object(Tensor& image, int x0, int y0, float intensity_h, float intensity_v) {
  draw_bar(image, kHorizontal, x0 + static_cast<int>(kHorizontalAnchorX),
           y0 + static_cast<int>(kHorizontalAnchorY), intensity_h);
  draw_bar(image, kVertical, x0 + static_cast<int>(kVerticalAnchorX),
           y0 + static_cast<int>(kVerticalAnchorY), intensity_v);
}

PLCGrammar single_part_grammar(Orientation orientation) {
  if (orientation != kHorizontal && orientation != kVertical) {
    throw Error(ErrorCode::InvalidArgument, "fixture parts are horizontal or vertical bars");
  }
  auto g = build_grammar(kRootSize, kRootSize,
                         {orientation == kHorizontal ? horizontal_part() : vertical_part()});
  g.id = orientation == kHorizontal ? "single_h" : "single_v";
  g.name = g.id;
  return g;
}

Data make(std::uint64_t seed) {
  Rng rng(seed);
  Data d;
  d.network = network();

  int next = 0;
  auto add = [&](Tensor image) {
    quantise(image);
    d.images.push_back({fmt::format("img_{:03d}", next++), std::move(image)});
    return d.images.back().image_id;
  };

  for (int i = 0; i < kObjects; ++i) {
    Tensor image = blank(rng);
    const int x0 = box_origin(rng), y0 = box_origin(rng);
    draw_object(image, x0, y0, intensity(rng), intensity(rng));
    if (i % 2 == 1) draw_far_bar(image, rng, x0, y0);
    d.truth.push_back(truth_box(add(std::move(image)), x0, y0));
  }
  for (int i = 0; i < kLoneBars; ++i) {
    // Half an object: one bar exactly where an object would have it.
    Tensor image = blank(rng);
    const int x0 = box_origin(rng), y0 = box_origin(rng);
    if (i % 2 == 0) {
      draw_bar(image, kHorizontal, x0 + static_cast<int>(kHorizontalAnchorX),
               y0 + static_cast<int>(kHorizontalAnchorY), intensity(rng));
    } else {
      draw_bar(image, kVertical, x0 + static_cast<int>(kVerticalAnchorX),
               y0 + static_cast<int>(kVerticalAnchorY), intensity(rng));
    }
    add(std::move(image));
  }
  for (int i = 0; i < kSwapped; ++i) {
    // Both bars inside one box, but each where the other one belongs.
    Tensor image = blank(rng);
    const int x0 = box_origin(rng), y0 = box_origin(rng);
    draw_bar(image, kVertical, x0 + 2, y0 + 2, intensity(rng));
    draw_bar(image, kHorizontal, x0 + 21, y0 + 22, intensity(rng));
    add(std::move(image));
  }

  for (int i = 0; i < kNegativeObjects + kConfusers; ++i) {
    Tensor image = blank(rng);
    const int x0 = box_origin(rng), y0 = box_origin(rng);
    draw_object(image, x0, y0, intensity(rng), intensity(rng));
    const std::string id = fmt::format("neg_{:03d}", i);
    if (i % 2 == 0) {
      d.negative_truth.push_back(truth_box(id, x0, y0));
    } else {
      draw_bar(image, kDiagonal, x0 + 12 + uniform_int(rng, -3, 3),
               y0 + 12 + uniform_int(rng, -3, 3), intensity(rng));
    }
    quantise(image);
    d.negative_images.push_back({id, std::move(image)});
  }

  Tensor probe = blank(rng);
  constexpr int kProbeX = 28, kProbeY = 30;
  draw_object(probe, kProbeX, kProbeY, 0.9f, 0.9f);
  quantise(probe);
  d.probe = {"probe", std::move(probe)};
  d.probe_box = truth_box("probe", kProbeX, kProbeY).box;

  d.grammar = build_grammar(kRootSize, kRootSize, {horizontal_part(), vertical_part()});
  d.grammar.id = "fixture";
  d.grammar.name = "bar pair";
  d.negative_grammar = build_grammar(
      kRootSize, kRootSize,
      {horizontal_part(), vertical_part(),
       neuron_part("diag", "conv2", kDiagonal, kRootSize / 2.0, kRootSize / 2.0,
                   kNegativeRadius, -1)});
  d.negative_grammar.id = "negative";
  d.negative_grammar.name = "bar pair without diagonal";
  d.detection.threshold = kDetectionThreshold;
  return d;
}

void write(const Data& data, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "images");
  fs::create_directories(directory / "negatives");
  save_network(data.network, directory / "network.json", "network.bin");
  for (const auto& r : data.images) write_png(directory / "images" / (r.image_id + ".png"), r.pixels);
  for (const auto& r : data.negative_images) {
    write_png(directory / "negatives" / (r.image_id + ".png"), r.pixels);
  }
  write_png(directory / "probe.png", data.probe.pixels);
  save_ground_truth(directory / "gt.txt", data.truth);
  save_ground_truth(directory / "negatives_gt.txt", data.negative_truth);

  auto save = [&](const std::string& name, const PLCGrammar& g, DetectOptions options) {
    save_grammar_file(directory / name, {g, "network.json", options});
  };
  save("fixture.grammar", data.grammar, data.detection);
  save("negative.grammar", data.negative_grammar, data.detection);
  DetectOptions single = data.detection;
  single.threshold = 0.0;
  save("single_h.grammar", single_part_grammar(kHorizontal), single);
  save("single_v.grammar", single_part_grammar(kVertical), single);
  DetectOptions bag = data.detection;
  bag.model = ScoringModel::Bag;
  auto bag_grammar = data.grammar;
  bag_grammar.id = "bag";
  save("bag.grammar", bag_grammar, bag);

  std::vector<Detection> perfect;
  for (const auto& g : data.truth) {
    Detection det;
    det.image_id = g.image_id;
    det.box = det.root = g.box;
    det.score = 1.0;
    perfect.push_back(det);
  }
  std::ofstream out(directory / "perfect.det");
  out << format_detections(perfect);
  if (!out) throw Error(ErrorCode::Io, "cannot write perfect.det");
}

}  // namespace netsurgeon::fixture
