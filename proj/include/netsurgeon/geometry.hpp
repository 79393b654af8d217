#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "netsurgeon/network.hpp"

namespace netsurgeon {

/// Receptive-field arithmetic along one image axis.
struct AxisGeometry {
  int rf_size = 1;
  int jump = 1;
  double offset = 0.0;  ///< image coordinate of the center of unit 0
  friend bool operator==(const AxisGeometry&, const AxisGeometry&) = default;
};

struct LayerGeometry {
  std::string name;  ///< "input" for the image itself
  AxisGeometry rows;
  AxisGeometry cols;
  // The layer's own kernel/stride/padding, needed to size its grid.
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
};

/// Entry 0 is the input image; entry i + 1 belongs to network layer i.
struct RFGeometry {
  std::vector<LayerGeometry> layers;

  const LayerGeometry& at(std::string_view layer) const;
  /// Grid extent of `layer` for an image of `image` pixels.
  Extent2 grid(std::string_view layer, Extent2 image) const;
};

RFGeometry layer_geometry(const NetworkSpec& network);

/// Half-open integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct GridPos {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const GridPos&, const GridPos&) = default;
};

/// Receptive field of one unit, before clipping.
PixelRect rf_rect_unclipped(const LayerGeometry& layer, GridPos position);

/// Receptive field of one unit, clipped to the image. Throws when the position is off-grid.
PixelRect rf_rect(const RFGeometry& geometry, std::string_view layer, GridPos position,
                  Extent2 image);

}  // namespace netsurgeon
