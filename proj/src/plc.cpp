#include "netsurgeon/plc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/parallel.hpp"

namespace netsurgeon {

namespace {

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  return std::none_of(s.begin(), s.end(), [](char c) {
    return c == ':' || std::isspace(static_cast<unsigned char>(c));
  });
}

std::vector<int> parent_indices(const PLCGrammar& g) {
  std::vector<int> parent(g.parts.size(), -1);
  for (std::size_t i = 0; i < g.parts.size(); ++i) {
    if (!g.parents[i].empty()) parent[i] = static_cast<int>(g.index_of(g.parents[i]));
  }
  return parent;
}

void check_same_grid(std::span<const ScoreMap> maps, std::size_t expected) {
  if (maps.size() != expected) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("grammar has {} parts but {} maps were given", expected, maps.size()));
  }
  for (const auto& m : maps) {
    if (m.rows() != maps[0].rows() || m.cols() != maps[0].cols() || m.jump != maps[0].jump ||
        m.offset != maps[0].offset) {
      throw Error(ErrorCode::ShapeMismatch, "part maps do not share one grid");
    }
  }
}

Tensor relu_plane(const Tensor& t, int channel) {
  Tensor out({1, t.height(), t.width()});
  const auto src = t.plane(channel);
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::max(src[i], 0.0f);
  return out;
}

struct Candidate {
  double score;
  Box box;
  Box root;
  std::size_t level;
  GridCell cell;
  int displacement = 0;  ///< summed L-inf distance of the parts from their rest cells
  std::vector<GridCell> parts;
};

/// Equal scores prefer the least deformed placement, then the smaller box.
bool candidate_order(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.displacement != b.displacement) return a.displacement < b.displacement;
  return std::tie(a.box.x0, a.box.y0, a.box.x1, a.box.y1) <
         std::tie(b.box.x0, b.box.y0, b.box.x1, b.box.y1);
}

bool candidate_before(double sa, const Box& a, double sb, const Box& b) {
  if (sa != sb) return sa > sb;
  return std::tie(a.x0, a.y0, a.x1, a.y1) < std::tie(b.x0, b.y0, b.x1, b.y1);
}

/// Greedy NMS over boxes already sorted by candidate_before; returns kept indices.
std::vector<std::size_t> greedy_keep(const std::vector<const Box*>& boxes, double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou(*boxes[i], *boxes[k]) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

bool fits(const NetworkSpec& network, Extent2 extent) {
  try {
    for (const auto& l : network.layers) extent = output_extent(l, extent);
    return true;
  } catch (const Error&) {
    return false;
  }
}

double parse_number(std::string_view token, std::string_view what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw Error(ErrorCode::Format, fmt::format("bad {} '{}' in detection line", what, token));
  }
  return value;
}

}  // namespace

std::size_t PLCGrammar::index_of(const std::string& part_id) const {
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].id == part_id) return i;
  }
  throw Error(ErrorCode::NotFound, fmt::format("grammar has no part '{}'", part_id));
}

bool PLCGrammar::is_star() const {
  return std::all_of(parents.begin(), parents.end(), [](const auto& p) { return p.empty(); });
}

void validate(const PLCGrammar& g) {
  if (g.root_height < 1 || g.root_width < 1) {
    throw Error(ErrorCode::InvalidArgument, "root size must be at least 1x1");
  }
  if (g.parts.empty()) throw Error(ErrorCode::InvalidArgument, "grammar needs at least one part");
  if (g.parents.size() != g.parts.size()) {
    throw Error(ErrorCode::InvalidArgument, "grammar needs one parent entry per part");
  }
  for (std::size_t i = 0; i < g.parts.size(); ++i) {
    const auto& p = g.parts[i];
    if (!valid_token(p.id)) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("part id '{}' must be non-empty without spaces or ':'", p.id));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (g.parts[j].id == p.id) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate part id '{}'", p.id));
      }
    }
    if (p.sign != 1 && p.sign != -1) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("part '{}': sign must be +1 or -1", p.id));
    }
    if (!(p.coefficient > 0.0) || !std::isfinite(p.coefficient)) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("part '{}': coefficient must be positive", p.id));
    }
    if (!(p.radius >= 0.0) || !std::isfinite(p.radius)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("part '{}': radius must be >= 0", p.id));
    }
    if (!std::isfinite(p.anchor_x) || !std::isfinite(p.anchor_y) ||
        p.anchor_x < -p.radius || p.anchor_x > g.root_width + p.radius ||
        p.anchor_y < -p.radius || p.anchor_y > g.root_height + p.radius) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("part '{}': anchor ({}, {}) lies outside the root box", p.id,
                              p.anchor_x, p.anchor_y));
    }
    if (p.calibration && (!(p.calibration->scale > 0.0) || !std::isfinite(p.calibration->shift))) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("part '{}': calibration scale must be positive", p.id));
    }
    if (p.source.kind == PartSource::Kind::Concept && p.source.concept_id.empty()) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("part '{}': empty concept id", p.id));
    }
  }
  const auto parent = parent_indices(g);
  for (std::size_t i = 0; i < parent.size(); ++i) {
    std::size_t steps = 0;
    for (int at = parent[i]; at >= 0; at = parent[at]) {
      if (static_cast<std::size_t>(at) == i || ++steps > parent.size()) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("grammar edges contain a cycle through '{}'", g.parts[i].id));
      }
    }
  }
}

PLCGrammar build_grammar(int root_height, int root_width, std::vector<PartSpec> parts,
                         std::vector<std::string> parents) {
  PLCGrammar g;
  g.root_height = root_height;
  g.root_width = root_width;
  if (parents.empty()) parents.assign(parts.size(), std::string());
  g.parts = std::move(parts);
  g.parents = std::move(parents);
  validate(g);
  return g;
}

std::vector<std::size_t> leaf_to_root_order(const PLCGrammar& g) {
  const auto parent = parent_indices(g);
  std::vector<int> depth(parent.size(), 0);
  for (std::size_t i = 0; i < parent.size(); ++i) {
    for (int at = parent[i]; at >= 0; at = parent[at]) ++depth[i];
  }
  std::vector<std::size_t> order(parent.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return depth[a] > depth[b]; });
  return order;
}

int grid_cells(double pixels, double jump) { return static_cast<int>(std::lround(pixels / jump)); }

namespace {

constexpr double kNegInfD = -std::numeric_limits<double>::infinity();

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

Plane to_plane(const Tensor& t) {
  return {t.height(), t.width(), std::vector<double>(t.data().begin(), t.data().end())};
}

Tensor to_tensor(const Plane& p) {
  return Tensor({1, p.h, p.w}, std::vector<float>(p.v.begin(), p.v.end()));
}

struct PlaneMax {
  Plane value;
  std::vector<GridCell> argmax;
};

PlaneMax plane_window_max(const Plane& map, int radius, int shift_row, int shift_col) {
  const int h = map.h, w = map.w;
  // Horizontal pass: best column of each source row for every shifted centre column.
  std::vector<double> hval(static_cast<std::size_t>(h) * w, kNegInfD);
  std::vector<int> hcol(hval.size(), -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int lo = std::max(0, x + shift_col - radius);
      const int hi = std::min(w - 1, x + shift_col + radius);
      double best = kNegInfD;
      int arg = -1;
      for (int k = lo; k <= hi; ++k) {
        const double v = map.at(y, k);
        if (arg < 0 || v > best) best = v, arg = k;
      }
      hval[y * w + x] = best;
      hcol[y * w + x] = arg;
    }
  }
  PlaneMax out{{h, w, std::vector<double>(hval.size(), kNegInfD)},
               std::vector<GridCell>(hval.size())};
  for (int y = 0; y < h; ++y) {
    const int lo = std::max(0, y + shift_row - radius);
    const int hi = std::min(h - 1, y + shift_row + radius);
    for (int x = 0; x < w; ++x) {
      double best = kNegInfD;
      int arg = -1;
      for (int k = lo; k <= hi; ++k) {
        if (hcol[k * w + x] < 0) continue;
        const double v = hval[k * w + x];
        if (arg < 0 || v > best) best = v, arg = k;
      }
      out.value.v[y * w + x] = best;
      if (arg >= 0) out.argmax[y * w + x] = {arg, hcol[arg * w + x]};
    }
  }
  return out;
}

/// Adds sign * m to acc. A part that cannot be placed, of either sign, makes the
/// placement invalid.
void accumulate(Plane& acc, const Plane& m, int sign) {
  for (std::size_t i = 0; i < acc.v.size(); ++i) {
    acc.v[i] = m.v[i] == kNegInfD ? kNegInfD : acc.v[i] + sign * m.v[i];
  }
}

/// Max over the half-open box [z, z + extent) per axis, clipped.
Plane box_max(const Plane& map, int extent_rows, int extent_cols) {
  const int h = map.h, w = map.w;
  Plane horizontal{h, w, std::vector<double>(map.v.size(), kNegInfD)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = kNegInfD;
      for (int k = x; k < std::min(w, x + extent_cols); ++k) best = std::max(best, map.at(y, k));
      horizontal.v[y * w + x] = best;
    }
  }
  Plane out{h, w, std::vector<double>(map.v.size(), kNegInfD)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = kNegInfD;
      for (int k = y; k < std::min(h, y + extent_rows); ++k) best = std::max(best, horizontal.at(k, x));
      out.v[y * w + x] = best;
    }
  }
  return out;
}

}  // namespace

WindowMax window_max(const Tensor& map, int radius, int shift_row, int shift_col) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "window radius must be >= 0");
  auto m = plane_window_max(to_plane(map), radius, shift_row, shift_col);
  return {to_tensor(m.value), std::move(m.argmax)};
}

ScoreMap resample_nearest(const ScoreMap& source, int rows, int cols, double jump,
                          double offset) {
  ScoreMap out;
  out.grid = Tensor({1, rows, cols});
  out.jump = jump;
  out.offset = offset;
  out.scale = source.scale;
  auto nearest = [&](int cell, int extent) {
    const double pixel = offset + cell * jump;
    const int src = static_cast<int>(std::floor((pixel - source.offset) / source.jump + 0.5));
    return std::clamp(src, 0, extent - 1);
  };
  std::vector<int> col_map(cols);
  for (int c = 0; c < cols; ++c) col_map[c] = nearest(c, source.cols());
  for (int r = 0; r < rows; ++r) {
    const int sr = nearest(r, source.rows());
    for (int c = 0; c < cols; ++c) out.grid.at(0, r, c) = source.at(sr, col_map[c]);
  }
  return out;
}

std::vector<ScoreMap> part_heatmaps(const NetworkSpec& network, const PLCGrammar& grammar,
                                    const ConceptRegistry& concepts, const Tensor& level_image,
                                    double scale) {
  const auto geometry = layer_geometry(network);
  const auto outputs = forward_all(network, level_image);
  std::vector<ScoreMap> raw;
  for (const auto& part : grammar.parts) {
    ScoreMap m;
    m.scale = scale;
    std::size_t layer = 0;
    if (part.source.kind == PartSource::Kind::Neuron) {
      layer = resolve_neuron(network, part.source.neuron);
      m.grid = relu_plane(outputs[layer], part.source.neuron.channel);
    } else {
      const auto it = concepts.find(part.source.concept_id);
      if (it == concepts.end()) {
        throw Error(ErrorCode::NotFound,
                    fmt::format("part '{}' references unknown concept '{}'", part.id,
                                part.source.concept_id));
      }
      layer = resolve_neuron(network, it->second.basis->source_neuron);
      m.grid = concept_heatmap(network, outputs, level_image, it->second);
    }
    const auto& g = geometry.layers[layer + 1];
    m.jump = g.cols.jump;
    m.offset = g.cols.offset;
    const double shift = part.calibration ? part.calibration->shift : 0.0;
    const double cscale = part.calibration ? part.calibration->scale : 1.0;
    for (float& v : m.grid.data()) {
      v = static_cast<float>(part.coefficient * (v - shift) / cscale);
    }
    raw.push_back(std::move(m));
  }

  std::size_t finest = 0;
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i].jump < raw[finest].jump) finest = i;
  }
  const ScoreMap reference = raw[finest];
  std::vector<ScoreMap> maps;
  for (const auto& m : raw) {
    if (m.jump == reference.jump && m.offset == reference.offset && m.rows() == reference.rows() &&
        m.cols() == reference.cols()) {
      maps.push_back(m);
    } else {
      maps.push_back(
          resample_nearest(m, reference.rows(), reference.cols(), reference.jump, reference.offset));
    }
  }
  return maps;
}

DpResult dp_score(const PLCGrammar& grammar, std::span<const ScoreMap> part_maps) {
  validate(grammar);
  check_same_grid(part_maps, grammar.parts.size());
  const ScoreMap& ref = part_maps[0];
  const auto parent = parent_indices(grammar);

  std::vector<Plane> score;
  for (const auto& m : part_maps) score.push_back(to_plane(m.grid));
  Plane root{ref.rows(), ref.cols(), std::vector<double>(ref.grid.size(), 0.0)};

  DpResult result;
  result.backtrace.resize(grammar.parts.size());
  for (std::size_t j : leaf_to_root_order(grammar)) {
    const auto& part = grammar.parts[j];
    const double base_x = parent[j] < 0 ? 0.0 : grammar.parts[parent[j]].anchor_x;
    const double base_y = parent[j] < 0 ? 0.0 : grammar.parts[parent[j]].anchor_y;
    const int shift_col = grid_cells(part.anchor_x - base_x, ref.jump);
    const int shift_row = grid_cells(part.anchor_y - base_y, ref.jump);
    auto wm = plane_window_max(score[j], grid_cells(part.radius, ref.jump), shift_row, shift_col);
    accumulate(parent[j] < 0 ? root : score[parent[j]], wm.value, part.sign);
    result.backtrace[j] = std::move(wm.argmax);
  }
  result.root.grid = to_tensor(root);
  result.root.jump = ref.jump;
  result.root.offset = ref.offset;
  result.root.scale = ref.scale;
  return result;
}

std::vector<GridCell> backtrack(const PLCGrammar& grammar, const DpResult& dp, GridCell root) {
  const auto parent = parent_indices(grammar);
  auto order = leaf_to_root_order(grammar);
  std::reverse(order.begin(), order.end());
  const int w = dp.root.cols();
  std::vector<GridCell> cells(grammar.parts.size());
  for (std::size_t j : order) {
    const GridCell from = parent[j] < 0 ? root : cells[parent[j]];
    if (!from.valid()) continue;
    cells[j] = dp.backtrace[j][static_cast<std::size_t>(from.row) * w + from.col];
  }
  return cells;
}

ScoreMap score_bag(const PLCGrammar& grammar, std::span<const ScoreMap> part_maps) {
  validate(grammar);
  if (!grammar.is_star()) throw Error(ErrorCode::Unsupported, "bag model needs a star grammar");
  check_same_grid(part_maps, grammar.parts.size());
  const ScoreMap& ref = part_maps[0];
  const int extent_rows = std::max(1, grid_cells(grammar.root_height, ref.jump));
  const int extent_cols = std::max(1, grid_cells(grammar.root_width, ref.jump));
  Plane root{ref.rows(), ref.cols(), std::vector<double>(ref.grid.size(), 0.0)};
  for (std::size_t j = 0; j < grammar.parts.size(); ++j) {
    accumulate(root, box_max(to_plane(part_maps[j].grid), extent_rows, extent_cols),
               grammar.parts[j].sign);
  }
  ScoreMap out;
  out.grid = to_tensor(root);
  out.jump = ref.jump;
  out.offset = ref.offset;
  out.scale = ref.scale;
  return out;
}

double iou(const Box& a, const Box& b) {
  if (!(a.x1 > a.x0) || !(a.y1 > a.y0) || !(b.x1 > b.x0) || !(b.y1 > b.y0)) {
    throw Error(ErrorCode::InvalidArgument, "iou of a degenerate box");
  }
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.width() * a.height() + b.width() * b.height() - inter);
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "nms threshold must lie in (0, 1)");
  }
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) {
                     return candidate_before(a.score, a.box, b.score, b.box);
                   });
  std::vector<const Box*> boxes;
  for (const auto& d : detections) boxes.push_back(&d.box);
  std::vector<Detection> kept;
  for (std::size_t i : greedy_keep(boxes, iou_threshold)) kept.push_back(detections[i]);
  return kept;
}

std::vector<Detection> detect(const NetworkSpec& network, const PLCGrammar& grammar,
                              const ConceptRegistry& concepts, const ImageRecord& image,
                              const DetectOptions& options) {
  validate(grammar);
  const double img_w = image.pixels.width(), img_h = image.pixels.height();
  const auto pyramid = make_pyramid(image.pixels, options.num_scales, options.scale_factor);

  struct Level {
    std::vector<ScoreMap> maps;
    DpResult dp;
  };
  std::vector<Level> levels(pyramid.size());
  std::vector<Candidate> candidates;
  const auto parent = parent_indices(grammar);
  for (std::size_t li = 0; li < pyramid.size(); ++li) {
    const auto& level = pyramid[li];
    if (!fits(network, {level.image.height(), level.image.width()})) continue;
    auto& state = levels[li];
    state.maps = part_heatmaps(network, grammar, concepts, level.image, level.scale);
    if (options.model == ScoringModel::Spatial) {
      state.dp = dp_score(grammar, state.maps);
    } else {
      state.dp.root = score_bag(grammar, state.maps);
    }
    const ScoreMap& root = state.dp.root;
    // Rest offsets of each part from its parent, as used by the DP.
    std::vector<int> shift_row(grammar.parts.size()), shift_col(grammar.parts.size());
    for (std::size_t j = 0; j < grammar.parts.size(); ++j) {
      const auto& part = grammar.parts[j];
      const double base_x = parent[j] < 0 ? 0.0 : grammar.parts[parent[j]].anchor_x;
      const double base_y = parent[j] < 0 ? 0.0 : grammar.parts[parent[j]].anchor_y;
      shift_col[j] = grid_cells(part.anchor_x - base_x, root.jump);
      shift_row[j] = grid_cells(part.anchor_y - base_y, root.jump);
    }
    for (int r = 0; r < root.rows(); ++r) {
      for (int c = 0; c < root.cols(); ++c) {
        const float s = root.at(r, c);
        if (s == kNegInf || !(s > options.threshold)) continue;
        Candidate cand;
        cand.score = s;
        cand.level = li;
        cand.cell = {r, c};
        cand.root.x0 = (root.offset + c * root.jump) / level.scale;
        cand.root.y0 = (root.offset + r * root.jump) / level.scale;
        cand.root.x1 = cand.root.x0 + grammar.root_width / level.scale;
        cand.root.y1 = cand.root.y0 + grammar.root_height / level.scale;
        cand.box = {std::clamp(cand.root.x0, 0.0, img_w), std::clamp(cand.root.y0, 0.0, img_h),
                    std::clamp(cand.root.x1, 0.0, img_w), std::clamp(cand.root.y1, 0.0, img_h)};
        if (cand.box.width() <= 0 || cand.box.height() <= 0) continue;
        if (options.model == ScoringModel::Spatial) {
          cand.parts = backtrack(grammar, state.dp, cand.cell);
          for (std::size_t j = 0; j < cand.parts.size(); ++j) {
            if (!cand.parts[j].valid()) continue;
            const GridCell from = parent[j] < 0 ? cand.cell : cand.parts[parent[j]];
            const int rest_row = from.row + shift_row[j], rest_col = from.col + shift_col[j];
            cand.displacement += std::max(std::abs(cand.parts[j].row - rest_row),
                                          std::abs(cand.parts[j].col - rest_col));
          }
        }
        candidates.push_back(std::move(cand));
      }
    }
  }

  std::stable_sort(candidates.begin(), candidates.end(), candidate_order);
  std::vector<const Box*> boxes;
  for (const auto& c : candidates) boxes.push_back(&c.box);

  std::vector<Detection> out;
  for (std::size_t i : greedy_keep(boxes, options.nms_iou)) {
    const auto& cand = candidates[i];
    const auto& state = levels[cand.level];
    Detection d;
    d.image_id = image.image_id;
    d.box = cand.box;
    d.root = cand.root;
    d.score = cand.score;
    d.scale = pyramid[cand.level].scale;
    if (options.model == ScoringModel::Spatial) {
      const auto& cells = cand.parts;
      const ScoreMap& root = state.dp.root;
      for (std::size_t j = 0; j < cells.size(); ++j) {
        if (!cells[j].valid()) continue;
        d.parts.push_back({grammar.parts[j].id,
                           (root.offset + cells[j].col * root.jump) / d.scale,
                           (root.offset + cells[j].row * root.jump) / d.scale,
                           state.maps[j].at(cells[j].row, cells[j].col)});
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> detect_all(const NetworkSpec& network, const PLCGrammar& grammar,
                                  const ConceptRegistry& concepts,
                                  std::span<const ImageRecord> images,
                                  const DetectOptions& options, int jobs) {
  std::vector<std::vector<Detection>> per_image(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    per_image[i] = detect(network, grammar, concepts, images[i], options);
  });
  std::vector<Detection> all;
  for (auto& v : per_image) all.insert(all.end(), v.begin(), v.end());
  return all;
}

std::string format_detection(const Detection& d) {
  std::string line = fmt::format("{} {} {} {} {} {} {}", d.image_id, d.box.x0, d.box.y0, d.box.x1,
                                 d.box.y1, d.score, d.scale);
  for (const auto& p : d.parts) line += fmt::format(" {}:{}:{}:{}", p.part_id, p.x, p.y, p.score);
  return line;
}

Detection parse_detection(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  if (tokens.size() < 7) {
    throw Error(ErrorCode::Format, fmt::format("detection line needs 7 fields: '{}'", line));
  }
  Detection d;
  d.image_id = tokens[0];
  d.box = {parse_number(tokens[1], "x0"), parse_number(tokens[2], "y0"),
           parse_number(tokens[3], "x1"), parse_number(tokens[4], "y1")};
  d.score = parse_number(tokens[5], "score");
  d.scale = parse_number(tokens[6], "scale");
  d.root = d.box;
  for (std::size_t i = 7; i < tokens.size(); ++i) {
    std::vector<std::string_view> fields;
    std::string_view rest = tokens[i];
    for (std::size_t pos; (pos = rest.find(':')) != std::string_view::npos;) {
      fields.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    fields.push_back(rest);
    if (fields.size() != 4) {
      throw Error(ErrorCode::Format, fmt::format("bad part placement '{}'", tokens[i]));
    }
    d.parts.push_back({std::string(fields[0]), parse_number(fields[1], "part x"),
                       parse_number(fields[2], "part y"), parse_number(fields[3], "part score")});
  }
  return d;
}

std::string format_detections(std::span<const Detection> detections) {
  std::string out;
  for (const auto& d : detections) {
    out += format_detection(d);
    out += '\n';
  }
  return out;
}

std::vector<Detection> parse_detections(std::string_view text) {
  std::vector<Detection> out;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(parse_detection(line));
  }
  return out;
}

}  // namespace netsurgeon
