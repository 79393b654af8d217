#pragma once

#include <compare>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "netsurgeon/dataset.hpp"
#include "netsurgeon/geometry.hpp"
#include "netsurgeon/network.hpp"

namespace netsurgeon {

/// One output channel of a convolution layer.
struct NeuronRef {
  std::string layer;
  int channel = 0;
  friend auto operator<=>(const NeuronRef&, const NeuronRef&) = default;
};

/// A unit of a neuron's activation map together with its unthresholded value w.x + b.
struct PatchRef {
  std::string image_id;
  std::string layer;
  int channel = 0;
  GridPos position;
  float activation = 0.0f;
  PixelRect rect;  ///< receptive field in image pixels, clipped
  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

/// The input window x that one convolution unit reads, zero-padded at borders.
/// Layout matches LayerSpec::filter(): (in_channel, ky, kx) row-major.
struct NeighborhoodVector {
  PatchRef source;
  std::vector<float> values;
};

inline constexpr int kDefaultPerImageCap = 2;

/// Validates that `neuron` names a convolution channel; returns the layer index.
std::size_t resolve_neuron(const NetworkSpec& network, const NeuronRef& neuron);

/// Per-image candidates of one neuron after spatial NMS (radius rf_size / 2) and the
/// per-image cap, ordered by activation descending then (row, col).
std::vector<PatchRef> image_candidates(const RFGeometry& geometry, const ImageRecord& image,
                                       const Tensor& layer_output, const NeuronRef& neuron,
                                       int per_image_cap);

/// Global top-n patches of a neuron. Ties break by (image_id, row, col).
std::vector<PatchRef> mine_top_activations(const NetworkSpec& network,
                                           std::span<const ImageRecord> images,
                                           const NeuronRef& neuron, int n,
                                           int per_image_cap = kDefaultPerImageCap,
                                           int jobs = 1);

/// Input window of `layer` at `position` given that layer's input tensor.
std::vector<float> read_window(const LayerSpec& layer, const Tensor& layer_input,
                               GridPos position);

/// The returned source describes channel 0 of the unit; callers that track a specific
/// neuron overwrite channel and activation.
NeighborhoodVector extract_neighborhood(const NetworkSpec& network, const Tensor& image,
                                        std::string_view layer, GridPos position);

/// Neighborhoods for a list of patches, forwarding each image once.
std::vector<NeighborhoodVector> extract_neighborhoods(const NetworkSpec& network,
                                                      std::span<const ImageRecord> images,
                                                      std::span<const PatchRef> patches,
                                                      int jobs = 1);

enum class SearchDirection { Inputs, Consumers };

struct RankedNeuron {
  NeuronRef neuron;
  double score = 0.0;
  friend bool operator==(const RankedNeuron&, const RankedNeuron&) = default;
};

/// Connected neurons one convolution away, ranked by their largest weight.
std::vector<RankedNeuron> weight_search(const NetworkSpec& network, const NeuronRef& neuron,
                                        SearchDirection direction);

/// Previous-layer channels ranked by their mean peak input over the neuron's top_k
/// activations. Throws SilentNeuron when the neuron never fires.
std::vector<RankedNeuron> cooccurrence_search(const NetworkSpec& network,
                                              std::span<const ImageRecord> images,
                                              const NeuronRef& neuron, int top_k,
                                              int per_image_cap = kDefaultPerImageCap,
                                              int jobs = 1);

/// One line per patch: "image_id layer channel row col activation x0 y0 x1 y1".
std::string format_patches(std::span<const PatchRef> patches);

/// One line per neuron: "layer channel score".
std::string format_ranked(std::span<const RankedNeuron> ranked);

/// Closest convolution before/after layer `index`, or nullopt.
std::optional<std::size_t> previous_convolution(const NetworkSpec& network, std::size_t index);
std::optional<std::size_t> next_convolution(const NetworkSpec& network, std::size_t index);

}  // namespace netsurgeon
