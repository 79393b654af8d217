#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "netsurgeon/tensor.hpp"

namespace netsurgeon {

enum class LayerKind { Convolution, Relu, MaxPool };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

struct Extent2 {
  int h = 1;
  int w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
  // Convolution only. Weights are out x in x kh x kw, row-major.
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> weights;
  std::vector<float> biases;

  float weight(int out, int in, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(out) * in_channels + in) * kernel.h + ky) *
                       kernel.w + kx];
  }
  /// Slice of the weights feeding one output channel (in x kh x kw).
  std::span<const float> filter(int out) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec make_conv(std::string name, int in_channels, int out_channels, Extent2 kernel,
                    Extent2 stride, Extent2 padding, std::vector<float> weights,
                    std::vector<float> biases);
LayerSpec make_relu(std::string name);
LayerSpec make_maxpool(std::string name, Extent2 kernel, Extent2 stride,
                       Extent2 padding = {0, 0});

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Shape3 input_shape;

  /// Index of a layer by name, or nullopt.
  std::optional<std::size_t> find(std::string_view name) const;
  /// Index of a layer by name; throws NotFound.
  std::size_t index_of(std::string_view name) const;
  const LayerSpec& layer(std::string_view name) const { return layers[index_of(name)]; }

  /// Channel count of layer `index`'s output (index == -1 means the image).
  int channels_after(int index) const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Throws Error on any structural inconsistency.
void validate(const NetworkSpec& network);

/// Output grid of one layer for a given input extent. Throws when empty.
Extent2 output_extent(const LayerSpec& layer, Extent2 input);

Tensor apply_layer(const LayerSpec& layer, const Tensor& input);

/// Every layer's output, in order.
std::vector<Tensor> forward_all(const NetworkSpec& network, const Tensor& image);

std::map<std::string, Tensor> forward(const NetworkSpec& network, const Tensor& image,
                                      const std::set<std::string>& taps);

/// Stable 64-bit content hash over structure and weight bits.
std::uint64_t network_hash(const NetworkSpec& network);
std::string hash_hex(std::uint64_t hash);

NetworkSpec load_network(const std::filesystem::path& manifest_path);

/// Writes `manifest_path` plus a sidecar blob named `blob_name` in the same directory.
void save_network(const NetworkSpec& network, const std::filesystem::path& manifest_path,
                  const std::string& blob_name);

}  // namespace netsurgeon
