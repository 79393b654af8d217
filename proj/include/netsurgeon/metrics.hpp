#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "netsurgeon/plc.hpp"

namespace netsurgeon {

enum class Pose { Left, Right };
std::string_view to_string(Pose pose);

struct GroundTruthBox {
  std::string image_id;
  std::string category;
  Box box;
  std::optional<Pose> pose;
  bool difficult = false;
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

/// One box per line: image_id category x0 y0 x1 y1 [pose|-] [difficult 0|1].
/// Blank lines and lines starting with '#' are skipped.
std::vector<GroundTruthBox> parse_ground_truth(std::string_view text);
std::string format_ground_truth(std::span<const GroundTruthBox> boxes);
std::vector<GroundTruthBox> load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const std::filesystem::path& path, std::span<const GroundTruthBox> boxes);

/// Outcome of greedy matching of one detection, in ranked order.
struct MatchResult {
  std::size_t detection = 0;  ///< index into the input detections
  enum class Kind { TruePositive, FalsePositive, Ignored } kind = Kind::FalsePositive;
  std::optional<std::size_t> ground_truth;  ///< index into the ground truth, if matched
};

/// Greedy matching in descending score (ties by image id then box). Each detection takes
/// the unmatched ground-truth box of its image with the highest IOU; it is a true
/// positive when that IOU reaches the threshold, ignored when the box is difficult.
std::vector<MatchResult> match_detections(std::span<const Detection> detections,
                                          std::span<const GroundTruthBox> truth,
                                          double iou_threshold);

/// Area under the step precision-recall curve. Empty (non-difficult) ground truth
/// gives 0 and a warning. `category` filters the ground truth when non-empty.
double average_precision(std::span<const Detection> detections,
                         std::span<const GroundTruthBox> truth, double iou_threshold,
                         std::vector<std::string>* warnings = nullptr,
                         std::string_view category = {});

struct PoseAccuracy {
  std::size_t matched = 0;
  std::size_t correct = 0;
  std::size_t ties = 0;  ///< equal best scores, resolved toward left
  bool defined() const { return matched > 0; }
  double accuracy() const;
};

PoseAccuracy pose_accuracy(std::span<const Detection> left, std::span<const Detection> right,
                           std::span<const GroundTruthBox> truth, double iou_threshold = 0.5);

double precision_at_k(std::span<const bool> relevance, int k);

struct ReportRow {
  std::string model;
  std::vector<double> ap;  ///< one per threshold
};

struct EvalReport {
  std::vector<double> iou_thresholds;
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

EvalReport evaluate_models(
    const std::vector<std::pair<std::string, std::vector<Detection>>>& models,
    std::span<const GroundTruthBox> truth, std::span<const double> iou_thresholds);

/// Whitespace table: header "model ap@t ..." then one row per model.
std::string format_report(const EvalReport& report);

}  // namespace netsurgeon
