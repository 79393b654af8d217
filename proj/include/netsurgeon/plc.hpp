#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netsurgeon/atlas.hpp"
#include "netsurgeon/embedding.hpp"
#include "netsurgeon/image.hpp"

namespace netsurgeon {

inline constexpr float kNegInf = -std::numeric_limits<float>::infinity();

/// Where a part's appearance map comes from: a raw channel or a concept filter.
struct PartSource {
  enum class Kind { Neuron, Concept };
  Kind kind = Kind::Neuron;
  NeuronRef neuron;        ///< Kind::Neuron
  std::string concept_id;  ///< Kind::Concept
  friend bool operator==(const PartSource&, const PartSource&) = default;
};

struct Calibration {
  double shift = 0.0;
  double scale = 1.0;
  friend bool operator==(const Calibration&, const Calibration&) = default;
};

struct PartSpec {
  std::string id;
  PartSource source;
  double anchor_x = 0.0;  ///< px from the root box top-left
  double anchor_y = 0.0;
  double radius = 0.0;    ///< L-infinity deformation half-width, px
  int sign = 1;
  double coefficient = 1.0;
  std::optional<Calibration> calibration;
  friend bool operator==(const PartSpec&, const PartSpec&) = default;
};

/// Root box with a tree of parts. parents[i] is the id of part i's parent, or empty for
/// the root. The root has no appearance term.
struct PLCGrammar {
  std::string id;
  std::string name;
  int root_height = 1;
  int root_width = 1;
  std::vector<PartSpec> parts;
  std::vector<std::string> parents;

  std::size_t index_of(const std::string& part_id) const;
  bool is_star() const;
  friend bool operator==(const PLCGrammar&, const PLCGrammar&) = default;
};

/// Validates and fills in star edges when `parents` is empty.
PLCGrammar build_grammar(int root_height, int root_width, std::vector<PartSpec> parts,
                         std::vector<std::string> parents = {});
void validate(const PLCGrammar& grammar);

/// Parts in leaf-to-root order: every part appears after all of its descendants.
std::vector<std::size_t> leaf_to_root_order(const PLCGrammar& grammar);

/// A 1 x h x w map with the image geometry of its cells: cell (row, col) sits at pixel
/// (offset + col * jump, offset + row * jump) of the pyramid level.
struct ScoreMap {
  Tensor grid;
  double jump = 1.0;
  double offset = 0.0;
  double scale = 1.0;

  int rows() const { return grid.height(); }
  int cols() const { return grid.width(); }
  float at(int row, int col) const { return grid.at(0, row, col); }
};

struct GridCell {
  int row = -1;
  int col = -1;
  bool valid() const { return row >= 0; }
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Windowed maximum of `map` around each cell shifted by (shift_row, shift_col), over the
/// window [center - radius, center + radius] clipped to the grid. Empty windows give
/// -inf and an invalid argmax. Ties go to the smallest (row, col).
struct WindowMax {
  Tensor value;                  ///< 1 x h x w
  std::vector<GridCell> argmax;  ///< row-major h x w
};

WindowMax window_max(const Tensor& map, int radius, int shift_row = 0, int shift_col = 0);

/// Cells of a pixel distance on a grid of the given jump.
int grid_cells(double pixels, double jump);

/// Concept filters a grammar may reference, keyed by id.
using ConceptRegistry = std::map<std::string, ConceptFilter>;

/// Appearance maps of every part of a grammar for one pyramid level, all on one common
/// grid: that of the part source with the finest stride.
std::vector<ScoreMap> part_heatmaps(const NetworkSpec& network, const PLCGrammar& grammar,
                                    const ConceptRegistry& concepts, const Tensor& level_image,
                                    double scale = 1.0);

/// Resamples `source` onto the target grid geometry by nearest cell centre.
ScoreMap resample_nearest(const ScoreMap& source, int rows, int cols, double jump, double offset);

struct DpResult {
  ScoreMap root;
  /// For each part, the chosen cell of that part given each cell of its parent.
  std::vector<std::vector<GridCell>> backtrace;
};

/// Leaf-to-root max-marginal accumulation over the part maps (one per part, all on the
/// same grid). A part of either sign that cannot be placed gives -inf.
DpResult dp_score(const PLCGrammar& grammar, std::span<const ScoreMap> part_maps);

/// Cell of every part for a root placement (invalid when a part could not be placed).
std::vector<GridCell> backtrack(const PLCGrammar& grammar, const DpResult& dp, GridCell root);

/// Bag-of-parts score: each part's maximum over the whole root box, anchors ignored.
ScoreMap score_bag(const PLCGrammar& grammar, std::span<const ScoreMap> part_maps);

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct PartPlacement {
  std::string part_id;
  double x = 0.0;  ///< original-image px
  double y = 0.0;
  double score = 0.0;
  friend bool operator==(const PartPlacement&, const PartPlacement&) = default;
};

struct Detection {
  std::string image_id;
  Box box;     ///< clipped to the image
  Box root;    ///< unclipped root box, root_size / scale
  double score = 0.0;
  double scale = 1.0;
  std::vector<PartPlacement> parts;
  friend bool operator==(const Detection&, const Detection&) = default;
};

enum class ScoringModel { Spatial, Bag };

struct DetectOptions {
  int num_scales = kDefaultPyramidScales;
  double scale_factor = kDefaultPyramidFactor;
  double threshold = 0.0;
  double nms_iou = 0.5;
  ScoringModel model = ScoringModel::Spatial;
};

std::vector<Detection> detect(const NetworkSpec& network, const PLCGrammar& grammar,
                              const ConceptRegistry& concepts, const ImageRecord& image,
                              const DetectOptions& options);

/// Detections over many images, concatenated in image order.
std::vector<Detection> detect_all(const NetworkSpec& network, const PLCGrammar& grammar,
                                  const ConceptRegistry& concepts,
                                  std::span<const ImageRecord> images,
                                  const DetectOptions& options, int jobs = 1);

double iou(const Box& a, const Box& b);

/// Greedy suppression by descending score; ties by box coordinates.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

/// One line per detection:
/// image_id x0 y0 x1 y1 score scale [part_id:x:y:score ...]
std::string format_detection(const Detection& detection);
Detection parse_detection(std::string_view line);
std::string format_detections(std::span<const Detection> detections);
std::vector<Detection> parse_detections(std::string_view text);

}  // namespace netsurgeon
