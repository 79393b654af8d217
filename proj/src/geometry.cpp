#include "netsurgeon/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

AxisGeometry step(const AxisGeometry& prev, int kernel, int stride, int padding) {
  AxisGeometry next;
  next.rf_size = prev.rf_size + (kernel - 1) * prev.jump;
  next.jump = prev.jump * stride;
  next.offset = prev.offset + ((kernel - 1) / 2.0 - padding) * prev.jump;
  return next;
}

}  // namespace

const LayerGeometry& RFGeometry::at(std::string_view layer) const {
  for (const auto& g : layers) {
    if (g.name == layer) return g;
  }
  throw Error(ErrorCode::NotFound, fmt::format("no layer named '{}'", layer));
}

Extent2 RFGeometry::grid(std::string_view layer, Extent2 image) const {
  Extent2 extent = image;
  for (const auto& g : layers) {
    if (g.name != "input") {
      LayerSpec probe;
      probe.name = g.name;
      probe.kernel = g.kernel;
      probe.stride = g.stride;
      probe.padding = g.padding;
      extent = output_extent(probe, extent);
    }
    if (g.name == layer) return extent;
  }
  throw Error(ErrorCode::NotFound, fmt::format("no layer named '{}'", layer));
}

RFGeometry layer_geometry(const NetworkSpec& network) {
  RFGeometry geometry;
  LayerGeometry input;
  input.name = "input";
  geometry.layers.push_back(input);
  for (const auto& l : network.layers) {
    const auto& prev = geometry.layers.back();
    LayerGeometry g;
    g.name = l.name;
    g.rows = step(prev.rows, l.kernel.h, l.stride.h, l.padding.h);
    g.cols = step(prev.cols, l.kernel.w, l.stride.w, l.padding.w);
    g.kernel = l.kernel;
    g.stride = l.stride;
    g.padding = l.padding;
    geometry.layers.push_back(std::move(g));
  }
  return geometry;
}

PixelRect rf_rect_unclipped(const LayerGeometry& layer, GridPos position) {
  // offset + pos * jump - (rf - 1) / 2 is integral whenever the network is
  // built from integer kernels, strides and paddings.
  const auto first = [](const AxisGeometry& a, int pos) {
    return static_cast<int>(std::lround(a.offset + pos * a.jump - (a.rf_size - 1) / 2.0));
  };
  PixelRect r;
  r.y0 = first(layer.rows, position.row);
  r.x0 = first(layer.cols, position.col);
  r.y1 = r.y0 + layer.rows.rf_size;
  r.x1 = r.x0 + layer.cols.rf_size;
  return r;
}

PixelRect rf_rect(const RFGeometry& geometry, std::string_view layer, GridPos position,
                  Extent2 image) {
  const Extent2 grid = geometry.grid(layer, image);
  if (position.row < 0 || position.col < 0 || position.row >= grid.h || position.col >= grid.w) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("position ({}, {}) outside {} grid {}x{}", position.row,
                            position.col, layer, grid.h, grid.w));
  }
  PixelRect r = rf_rect_unclipped(geometry.at(layer), position);
  r.y0 = std::clamp(r.y0, 0, image.h);
  r.x0 = std::clamp(r.x0, 0, image.w);
  r.y1 = std::clamp(r.y1, 0, image.h);
  r.x1 = std::clamp(r.x1, 0, image.w);
  return r;
}

}  // namespace netsurgeon
