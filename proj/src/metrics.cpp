#include "netsurgeon/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

double parse_coord(const std::string& token, std::size_t line_no) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw Error(ErrorCode::Format,
                fmt::format("ground truth line {}: bad number '{}'", line_no, token));
  }
  return value;
}

}  // namespace

std::string_view to_string(Pose pose) { return pose == Pose::Left ? "left" : "right"; }

std::vector<GroundTruthBox> parse_ground_truth(std::string_view text) {
  std::vector<GroundTruthBox> out;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> t;
    for (std::string s; fields >> s;) t.push_back(s);
    if (t.empty() || t[0][0] == '#') continue;
    if (t.size() < 6 || t.size() > 8) {
      throw Error(ErrorCode::Format,
                  fmt::format("ground truth line {}: expected 6 to 8 fields", line_no));
    }
    GroundTruthBox g;
    g.image_id = t[0];
    g.category = t[1];
    g.box = {parse_coord(t[2], line_no), parse_coord(t[3], line_no), parse_coord(t[4], line_no),
             parse_coord(t[5], line_no)};
    if (!(g.box.x1 > g.box.x0) || !(g.box.y1 > g.box.y0)) {
      throw Error(ErrorCode::Format, fmt::format("ground truth line {}: degenerate box", line_no));
    }
    if (t.size() > 6) {
      if (t[6] == "left") {
        g.pose = Pose::Left;
      } else if (t[6] == "right") {
        g.pose = Pose::Right;
      } else if (t[6] != "-") {
        throw Error(ErrorCode::Format,
                    fmt::format("ground truth line {}: pose must be left, right or -", line_no));
      }
    }
    if (t.size() > 7) {
      if (t[7] != "0" && t[7] != "1") {
        throw Error(ErrorCode::Format,
                    fmt::format("ground truth line {}: difficult must be 0 or 1", line_no));
      }
      g.difficult = t[7] == "1";
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string format_ground_truth(std::span<const GroundTruthBox> boxes) {
  std::string out;
  for (const auto& g : boxes) {
    out += fmt::format("{} {} {} {} {} {} {} {}\n", g.image_id, g.category, g.box.x0, g.box.y0,
                       g.box.x1, g.box.y1, g.pose ? to_string(*g.pose) : "-",
                       g.difficult ? 1 : 0);
  }
  return out;
}

std::vector<GroundTruthBox> load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_ground_truth(buffer.str());
}

void save_ground_truth(const std::filesystem::path& path, std::span<const GroundTruthBox> boxes) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
  out << format_ground_truth(boxes);
}

std::vector<MatchResult> match_detections(std::span<const Detection> detections,
                                          std::span<const GroundTruthBox> truth,
                                          double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = detections[a];
    const auto& db = detections[b];
    if (da.score != db.score) return da.score > db.score;
    if (da.image_id != db.image_id) return da.image_id < db.image_id;
    return std::tie(da.box.x0, da.box.y0, da.box.x1, da.box.y1) <
           std::tie(db.box.x0, db.box.y0, db.box.x1, db.box.y1);
  });

  std::vector<bool> taken(truth.size(), false);
  std::vector<MatchResult> results;
  results.reserve(order.size());
  for (std::size_t i : order) {
    MatchResult r;
    r.detection = i;
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (taken[g] || truth[g].image_id != detections[i].image_id) continue;
      const double o = iou(detections[i].box, truth[g].box);
      if (o > best) best = o, best_gt = g;
    }
    if (best_gt && best >= iou_threshold) {
      taken[*best_gt] = true;
      r.ground_truth = best_gt;
      r.kind = truth[*best_gt].difficult ? MatchResult::Kind::Ignored
                                         : MatchResult::Kind::TruePositive;
    }
    results.push_back(r);
  }
  return results;
}

double average_precision(std::span<const Detection> detections,
                         std::span<const GroundTruthBox> truth, double iou_threshold,
                         std::vector<std::string>* warnings, std::string_view category) {
  std::vector<GroundTruthBox> selected;
  for (const auto& g : truth) {
    if (category.empty() || g.category == category) selected.push_back(g);
  }
  const auto positives = std::count_if(selected.begin(), selected.end(),
                                       [](const GroundTruthBox& g) { return !g.difficult; });
  if (positives == 0) {
    if (warnings) warnings->push_back("no ground truth boxes; average precision defined as 0");
    return 0.0;
  }
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (const auto& m : match_detections(detections, selected, iou_threshold)) {
    if (m.kind == MatchResult::Kind::Ignored) continue;
    ++seen;
    if (m.kind == MatchResult::Kind::TruePositive) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(seen);
    }
  }
  return ap / static_cast<double>(positives);
}

double PoseAccuracy::accuracy() const {
  if (matched == 0) throw Error(ErrorCode::Degenerate, "no ground truth box was matched");
  return static_cast<double>(correct) / static_cast<double>(matched);
}

PoseAccuracy pose_accuracy(std::span<const Detection> left, std::span<const Detection> right,
                           std::span<const GroundTruthBox> truth, double iou_threshold) {
  auto best_score = [&](std::span<const Detection> dets, const GroundTruthBox& g) {
    std::optional<double> best;
    for (const auto& d : dets) {
      if (d.image_id != g.image_id || iou(d.box, g.box) < iou_threshold) continue;
      if (!best || d.score > *best) best = d.score;
    }
    return best;
  };
  PoseAccuracy result;
  for (const auto& g : truth) {
    if (!g.pose) continue;
    const auto l = best_score(left, g);
    const auto r = best_score(right, g);
    if (!l && !r) continue;
    ++result.matched;
    Pose predicted;
    if (l && r) {
      if (*l == *r) ++result.ties;
      predicted = *l >= *r ? Pose::Left : Pose::Right;
    } else {
      predicted = l ? Pose::Left : Pose::Right;
    }
    if (predicted == *g.pose) ++result.correct;
  }
  return result;
}

double precision_at_k(std::span<const bool> relevance, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > relevance.size()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("k = {} outside [1, {}]", k, relevance.size()));
  }
  const auto hits = std::count(relevance.begin(), relevance.begin() + k, true);
  return static_cast<double>(hits) / k;
}

EvalReport evaluate_models(
    const std::vector<std::pair<std::string, std::vector<Detection>>>& models,
    std::span<const GroundTruthBox> truth, std::span<const double> iou_thresholds) {
  EvalReport report;
  report.iou_thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  for (const auto& [name, dets] : models) {
    ReportRow row;
    row.model = name;
    for (double t : iou_thresholds) {
      row.ap.push_back(average_precision(dets, truth, t, &report.warnings));
    }
    report.rows.push_back(std::move(row));
  }
  std::sort(report.warnings.begin(), report.warnings.end());
  report.warnings.erase(std::unique(report.warnings.begin(), report.warnings.end()),
                        report.warnings.end());
  return report;
}

std::string format_report(const EvalReport& report) {
  std::string out = "model";
  for (double t : report.iou_thresholds) out += fmt::format(" ap@{}", t);
  out += '\n';
  for (const auto& row : report.rows) {
    out += row.model;
    for (double ap : row.ap) out += fmt::format(" {:.6f}", ap);
    out += '\n';
  }
  return out;
}

}  // namespace netsurgeon
