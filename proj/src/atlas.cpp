#include "netsurgeon/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/parallel.hpp"

namespace netsurgeon {

namespace {

bool patch_order(const PatchRef& a, const PatchRef& b) {
  if (a.activation != b.activation) return a.activation > b.activation;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return a.position < b.position;
}

bool ranked_order(const RankedNeuron& a, const RankedNeuron& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.neuron.channel < b.neuron.channel;
}

}  // namespace

std::size_t resolve_neuron(const NetworkSpec& network, const NeuronRef& neuron) {
  const std::size_t index = network.index_of(neuron.layer);
  const auto& layer = network.layers[index];
  if (layer.kind != LayerKind::Convolution) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("layer '{}' is not a convolution", neuron.layer));
  }
  if (neuron.channel < 0 || neuron.channel >= layer.out_channels) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("channel {} out of range for '{}' ({} channels)", neuron.channel,
                            neuron.layer, layer.out_channels));
  }
  return index;
}

std::optional<std::size_t> previous_convolution(const NetworkSpec& network, std::size_t index) {
  for (std::size_t i = index; i-- > 0;) {
    if (network.layers[i].kind == LayerKind::Convolution) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> next_convolution(const NetworkSpec& network, std::size_t index) {
  for (std::size_t i = index + 1; i < network.layers.size(); ++i) {
    if (network.layers[i].kind == LayerKind::Convolution) return i;
  }
  return std::nullopt;
}

std::vector<PatchRef> image_candidates(const RFGeometry& geometry, const ImageRecord& image,
                                       const Tensor& layer_output, const NeuronRef& neuron,
                                       int per_image_cap) {
  const auto& g = geometry.at(neuron.layer);
  const Extent2 extent{image.pixels.height(), image.pixels.width()};

  std::vector<PatchRef> all;
  all.reserve(static_cast<std::size_t>(layer_output.height()) * layer_output.width());
  for (int y = 0; y < layer_output.height(); ++y) {
    for (int x = 0; x < layer_output.width(); ++x) {
      all.push_back({image.image_id, neuron.layer, neuron.channel, {y, x},
                     layer_output.at(neuron.channel, y, x), {}});
    }
  }
  std::sort(all.begin(), all.end(), patch_order);

  const double radius_rows = g.rows.rf_size / 2.0;
  const double radius_cols = g.cols.rf_size / 2.0;
  std::vector<PatchRef> kept;
  for (auto& p : all) {
    if (static_cast<int>(kept.size()) >= per_image_cap) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const PatchRef& k) {
      return std::abs(k.position.row - p.position.row) * g.rows.jump <= radius_rows &&
             std::abs(k.position.col - p.position.col) * g.cols.jump <= radius_cols;
    });
    if (suppressed) continue;
    p.rect = rf_rect(geometry, neuron.layer, p.position, extent);
    kept.push_back(std::move(p));
  }
  return kept;
}

std::vector<PatchRef> mine_top_activations(const NetworkSpec& network,
                                           std::span<const ImageRecord> images,
                                           const NeuronRef& neuron, int n, int per_image_cap,
                                           int jobs) {
  resolve_neuron(network, neuron);
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  if (per_image_cap < 1) throw Error(ErrorCode::InvalidArgument, "per_image_cap must be >= 1");
  const auto geometry = layer_geometry(network);

  std::vector<std::vector<PatchRef>> per_image(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    const auto taps = forward(network, images[i].pixels, {neuron.layer});
    per_image[i] =
        image_candidates(geometry, images[i], taps.at(neuron.layer), neuron, per_image_cap);
  });

  std::vector<PatchRef> merged;
  for (auto& v : per_image) std::move(v.begin(), v.end(), std::back_inserter(merged));
  std::sort(merged.begin(), merged.end(), patch_order);
  if (merged.size() > static_cast<std::size_t>(n)) merged.resize(n);
  return merged;
}

std::vector<float> read_window(const LayerSpec& layer, const Tensor& layer_input,
                               GridPos position) {
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(layer_input.channels()) * layer.kernel.h *
                 layer.kernel.w);
  const int y0 = position.row * layer.stride.h - layer.padding.h;
  const int x0 = position.col * layer.stride.w - layer.padding.w;
  for (int c = 0; c < layer_input.channels(); ++c) {
    for (int ky = 0; ky < layer.kernel.h; ++ky) {
      for (int kx = 0; kx < layer.kernel.w; ++kx) {
        const int y = y0 + ky;
        const int x = x0 + kx;
        const bool inside = y >= 0 && y < layer_input.height() && x >= 0 && x < layer_input.width();
        values.push_back(inside ? layer_input.at(c, y, x) : 0.0f);
      }
    }
  }
  return values;
}

namespace {

void check_position(const Tensor& layer_output, std::string_view layer, GridPos position) {
  if (position.row < 0 || position.col < 0 || position.row >= layer_output.height() ||
      position.col >= layer_output.width()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("position ({}, {}) outside {} grid {}x{}", position.row,
                            position.col, layer, layer_output.height(), layer_output.width()));
  }
}

NeighborhoodVector neighborhood_from(const NetworkSpec& network,
                                     const std::vector<Tensor>& outputs, const Tensor& image,
                                     std::size_t index, PatchRef source) {
  const auto& layer = network.layers[index];
  const Tensor& input = index == 0 ? image : outputs[index - 1];
  check_position(outputs[index], layer.name, source.position);
  auto values = read_window(layer, input, source.position);
  return {std::move(source), std::move(values)};
}

}  // namespace

NeighborhoodVector extract_neighborhood(const NetworkSpec& network, const Tensor& image,
                                        std::string_view layer, GridPos position) {
  const std::size_t index = network.index_of(layer);
  if (network.layers[index].kind != LayerKind::Convolution) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("neighborhoods are defined on convolutions; '{}' is {}", layer,
                            to_string(network.layers[index].kind)));
  }
  const auto outputs = forward_all(network, image);
  const auto geometry = layer_geometry(network);
  check_position(outputs[index], layer, position);
  PatchRef source;
  source.layer = std::string(layer);
  source.position = position;
  source.activation = outputs[index].at(0, position.row, position.col);
  source.rect = rf_rect(geometry, layer, position, {image.height(), image.width()});
  return neighborhood_from(network, outputs, image, index, std::move(source));
}

std::vector<NeighborhoodVector> extract_neighborhoods(const NetworkSpec& network,
                                                      std::span<const ImageRecord> images,
                                                      std::span<const PatchRef> patches,
                                                      int jobs) {
  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < images.size(); ++i) image_index[images[i].image_id] = i;
  std::map<std::size_t, std::vector<std::size_t>> by_image;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    auto it = image_index.find(patches[p].image_id);
    if (it == image_index.end()) {
      throw Error(ErrorCode::NotFound, fmt::format("unknown image '{}'", patches[p].image_id));
    }
    resolve_neuron(network, {patches[p].layer, patches[p].channel});
    by_image[it->second].push_back(p);
  }
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> work(by_image.begin(),
                                                                     by_image.end());
  std::vector<NeighborhoodVector> result(patches.size());
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto& image = images[work[w].first].pixels;
    const auto outputs = forward_all(network, image);
    for (std::size_t p : work[w].second) {
      result[p] = neighborhood_from(network, outputs, image, network.index_of(patches[p].layer),
                                    patches[p]);
    }
  });
  return result;
}

std::vector<RankedNeuron> weight_search(const NetworkSpec& network, const NeuronRef& neuron,
                                        SearchDirection direction) {
  const std::size_t index = resolve_neuron(network, neuron);
  std::vector<RankedNeuron> ranked;
  if (direction == SearchDirection::Inputs) {
    const auto prev = previous_convolution(network, index);
    if (!prev) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("'{}' has no preceding convolution", neuron.layer));
    }
    const auto& layer = network.layers[index];
    for (int c = 0; c < layer.in_channels; ++c) {
      float best = -std::numeric_limits<float>::infinity();
      for (int ky = 0; ky < layer.kernel.h; ++ky)
        for (int kx = 0; kx < layer.kernel.w; ++kx)
          best = std::max(best, layer.weight(neuron.channel, c, ky, kx));
      ranked.push_back({{network.layers[*prev].name, c}, best});
    }
  } else {
    const auto next = next_convolution(network, index);
    if (!next) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("'{}' has no consuming convolution", neuron.layer));
    }
    const auto& layer = network.layers[*next];
    for (int o = 0; o < layer.out_channels; ++o) {
      float best = -std::numeric_limits<float>::infinity();
      for (int ky = 0; ky < layer.kernel.h; ++ky)
        for (int kx = 0; kx < layer.kernel.w; ++kx)
          best = std::max(best, layer.weight(o, neuron.channel, ky, kx));
      ranked.push_back({{layer.name, o}, best});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), ranked_order);
  return ranked;
}

std::vector<RankedNeuron> cooccurrence_search(const NetworkSpec& network,
                                              std::span<const ImageRecord> images,
                                              const NeuronRef& neuron, int top_k,
                                              int per_image_cap, int jobs) {
  const std::size_t index = resolve_neuron(network, neuron);
  if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
  const auto prev = previous_convolution(network, index);
  if (!prev) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("'{}' has no preceding convolution", neuron.layer));
  }
  const auto top = mine_top_activations(network, images, neuron, top_k, per_image_cap, jobs);
  if (top.empty() || top.front().activation <= 0.0f) {
    throw Error(ErrorCode::SilentNeuron,
                fmt::format("neuron {}:{} never fires on this dataset", neuron.layer,
                            neuron.channel));
  }
  const auto neighborhoods = extract_neighborhoods(network, images, top, jobs);
  const auto& layer = network.layers[index];
  const std::size_t window = static_cast<std::size_t>(layer.kernel.h) * layer.kernel.w;
  std::vector<double> sums(layer.in_channels, 0.0);
  for (const auto& nb : neighborhoods) {
    for (int c = 0; c < layer.in_channels; ++c) {
      const auto begin = nb.values.begin() + static_cast<std::ptrdiff_t>(c * window);
      sums[c] += *std::max_element(begin, begin + static_cast<std::ptrdiff_t>(window));
    }
  }
  std::vector<RankedNeuron> ranked;
  for (int c = 0; c < layer.in_channels; ++c) {
    ranked.push_back({{network.layers[*prev].name, c},
                      sums[c] / static_cast<double>(neighborhoods.size())});
  }
  std::stable_sort(ranked.begin(), ranked.end(), ranked_order);
  return ranked;
}

std::string format_patches(std::span<const PatchRef> patches) {
  std::string out;
  for (const auto& p : patches) {
    out += fmt::format("{} {} {} {} {} {} {} {} {} {}\n", p.image_id, p.layer, p.channel,
                       p.position.row, p.position.col, p.activation, p.rect.x0, p.rect.y0,
                       p.rect.x1, p.rect.y1);
  }
  return out;
}

std::string format_ranked(std::span<const RankedNeuron> ranked) {
  std::string out;
  for (const auto& r : ranked) {
    out += fmt::format("{} {} {}\n", r.neuron.layer, r.neuron.channel, r.score);
  }
  return out;
}

}  // namespace netsurgeon
