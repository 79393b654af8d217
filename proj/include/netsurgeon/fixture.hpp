#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "netsurgeon/metrics.hpp"
#include "netsurgeon/plc.hpp"

namespace netsurgeon::fixture {

// A hand-built two-layer network whose units respond to oriented bars, plus synthetic
// images with planted bar-pair objects. Every activation is predictable by hand.

enum Orientation : int { kHorizontal = 0, kVertical = 1, kDiagonal = 2, kAntiDiagonal = 3 };

// conv2 channels: 0-3 pass the pooled conv1 channels through; 4 fires on a horizontal
// plus vertical bar crossing; 5 on a diagonal cross; 6 on either diagonal.
inline constexpr int kCrossChannel = 4;
inline constexpr int kDiagonalCrossChannel = 5;
inline constexpr int kAnyDiagonalChannel = 6;

inline constexpr int kImageSize = 80;
inline constexpr int kRootSize = 24;
inline constexpr int kBarLength = 5;
// Bar centres relative to the object's box top-left (x, y).
// Near opposite corners, so that boxes containing both bars all overlap the true box.
inline constexpr double kHorizontalAnchorX = 2, kHorizontalAnchorY = 1;
inline constexpr double kVerticalAnchorX = 21, kVerticalAnchorY = 21;
inline constexpr double kPartRadius = 1;
inline constexpr double kNegativeRadius = 12;
inline constexpr double kDetectionThreshold = 1.0;
inline constexpr const char* kCategory = "barpair";

NetworkSpec network();

/// Draws a bar of kBarLength pixels centred on (cx, cy).
void draw_bar(Tensor& image, Orientation orientation, int cx, int cy, float intensity);

/// The planted object: both bars at their anchors relative to the box top-left.
void draw_object(Tensor& image, int x0, int y0, float intensity_h, float intensity_v);

struct Data {
  NetworkSpec network;
  std::vector<ImageRecord> images;  ///< objects, lone bars and swapped pairs
  std::vector<GroundTruthBox> truth;
  std::vector<ImageRecord> negative_images;  ///< objects and objects with a diagonal inside
  std::vector<GroundTruthBox> negative_truth;
  ImageRecord probe;
  Box probe_box;
  PLCGrammar grammar;           ///< spatial two-part model
  PLCGrammar negative_grammar;  ///< the same plus a negative diagonal part
  DetectOptions detection;
};

/// Deterministic for a given seed. Pixel values are quantised to 8 bits so images read
/// back from disk are identical.
Data make(std::uint64_t seed = 7);

/// Single-part grammar placing one of the two bars of the spatial model.
PLCGrammar single_part_grammar(Orientation orientation);

/// Writes network.json/.bin, images/, negatives/, probe.png, gt.txt, negatives_gt.txt,
/// fixture.grammar, negative.grammar, single_h.grammar, single_v.grammar, bag.grammar
/// and perfect.det (the ground truth as score-1 detections).
void write(const Data& data, const std::filesystem::path& directory);

}  // namespace netsurgeon::fixture
