#include "netsurgeon/network.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "netsurgeon/error.hpp"
#include "netsurgeon/hash.hpp"

namespace netsurgeon {

using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Convolution: return "convolution";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "convolution") return LayerKind::Convolution;
  if (text == "relu") return LayerKind::Relu;
  if (text == "maxpool") return LayerKind::MaxPool;
  throw Error(ErrorCode::Format, fmt::format("unknown layer kind '{}'", text));
}

std::span<const float> LayerSpec::filter(int out) const {
  const std::size_t n = static_cast<std::size_t>(in_channels) * kernel.h * kernel.w;
  return std::span<const float>(weights).subspan(out * n, n);
}

LayerSpec make_conv(std::string name, int in_channels, int out_channels, Extent2 kernel,
                    Extent2 stride, Extent2 padding, std::vector<float> weights,
                    std::vector<float> biases) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Convolution;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.weights = std::move(weights);
  l.biases = std::move(biases);
  return l;
}

LayerSpec make_relu(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Relu;
  return l;
}

LayerSpec make_maxpool(std::string name, Extent2 kernel, Extent2 stride, Extent2 padding) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::MaxPool;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

std::optional<std::size_t> NetworkSpec::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t NetworkSpec::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error(ErrorCode::NotFound, fmt::format("no layer named '{}'", name));
}

int NetworkSpec::channels_after(int index) const {
  int channels = input_shape.channels;
  for (int i = 0; i <= index && i < static_cast<int>(layers.size()); ++i) {
    if (layers[i].kind == LayerKind::Convolution) channels = layers[i].out_channels;
  }
  return channels;
}

void validate(const NetworkSpec& network) {
  if (network.input_shape.channels < 1 || network.input_shape.height < 1 ||
      network.input_shape.width < 1) {
    throw Error(ErrorCode::ShapeMismatch, "input shape dimensions must be >= 1");
  }
  std::set<std::string> names;
  int channels = network.input_shape.channels;
  for (const auto& l : network.layers) {
    if (l.name.empty() || l.name == "input") {
      throw Error(ErrorCode::Format, fmt::format("invalid layer name '{}'", l.name));
    }
    if (!names.insert(l.name).second) {
      throw Error(ErrorCode::Format, fmt::format("duplicate layer name '{}'", l.name));
    }
    if (l.kernel.h < 1 || l.kernel.w < 1 || l.stride.h < 1 || l.stride.w < 1 ||
        l.padding.h < 0 || l.padding.w < 0) {
      throw Error(ErrorCode::Format,
                  fmt::format("layer '{}': kernel/stride must be >= 1, padding >= 0", l.name));
    }
    const bool conv = l.kind == LayerKind::Convolution;
    if (conv) {
      if (l.in_channels != channels) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("layer '{}' expects {} input channels, previous layer gives {}",
                                l.name, l.in_channels, channels));
      }
      if (l.out_channels < 1) {
        throw Error(ErrorCode::Format, fmt::format("layer '{}': out_channels < 1", l.name));
      }
      const std::size_t expect =
          static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel.h * l.kernel.w;
      if (l.weights.size() != expect ||
          l.biases.size() != static_cast<std::size_t>(l.out_channels)) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("layer '{}': weight/bias count does not match shape", l.name));
      }
      channels = l.out_channels;
    } else if (!l.weights.empty() || !l.biases.empty()) {
      throw Error(ErrorCode::Format,
                  fmt::format("layer '{}': only convolutions carry weights", l.name));
    }
    if (l.kind == LayerKind::Relu &&
        (l.kernel != Extent2{1, 1} || l.stride != Extent2{1, 1} || l.padding != Extent2{0, 0})) {
      throw Error(ErrorCode::Format, fmt::format("layer '{}': relu has no geometry", l.name));
    }
  }
}

Extent2 output_extent(const LayerSpec& layer, Extent2 input) {
  const int h = (input.h + 2 * layer.padding.h - layer.kernel.h) / layer.stride.h + 1;
  const int w = (input.w + 2 * layer.padding.w - layer.kernel.w) / layer.stride.w + 1;
  if (input.h + 2 * layer.padding.h < layer.kernel.h ||
      input.w + 2 * layer.padding.w < layer.kernel.w || h < 1 || w < 1) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("layer '{}': input {}x{} too small for kernel {}x{}", layer.name,
                            input.h, input.w, layer.kernel.h, layer.kernel.w));
  }
  return {h, w};
}

namespace {

Tensor convolve(const LayerSpec& l, const Tensor& in) {
  if (in.channels() != l.in_channels) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("layer '{}': input has {} channels, expected {}", l.name,
                            in.channels(), l.in_channels));
  }
  const Extent2 out = output_extent(l, {in.height(), in.width()});
  Tensor result({l.out_channels, out.h, out.w});
  for (int o = 0; o < l.out_channels; ++o) {
    const float bias = l.biases[o];
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        const int y0 = y * l.stride.h - l.padding.h;
        const int x0 = x * l.stride.w - l.padding.w;
        double acc = 0.0;
        for (int c = 0; c < l.in_channels; ++c) {
          for (int ky = 0; ky < l.kernel.h; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= in.height()) continue;
            for (int kx = 0; kx < l.kernel.w; ++kx) {
              const int ix = x0 + kx;
              if (ix < 0 || ix >= in.width()) continue;
              acc += static_cast<double>(l.weight(o, c, ky, kx)) * in.at(c, iy, ix);
            }
          }
        }
        result.at(o, y, x) = static_cast<float>(acc + bias);
      }
    }
  }
  return result;
}

Tensor max_pool(const LayerSpec& l, const Tensor& in) {
  const Extent2 out = output_extent(l, {in.height(), in.width()});
  Tensor result({in.channels(), out.h, out.w});
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        float best = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < l.kernel.h; ++ky) {
          const int iy = y * l.stride.h - l.padding.h + ky;
          if (iy < 0 || iy >= in.height()) continue;
          for (int kx = 0; kx < l.kernel.w; ++kx) {
            const int ix = x * l.stride.w - l.padding.w + kx;
            if (ix < 0 || ix >= in.width()) continue;
            best = std::max(best, in.at(c, iy, ix));
          }
        }
        result.at(c, y, x) = best;
      }
    }
  }
  return result;
}

}  // namespace

Tensor apply_layer(const LayerSpec& layer, const Tensor& input) {
  switch (layer.kind) {
    case LayerKind::Convolution:
      return convolve(layer, input);
    case LayerKind::Relu: {
      Tensor out = input;
      for (float& v : out.data()) v = std::max(v, 0.0f);
      return out;
    }
    case LayerKind::MaxPool:
      return max_pool(layer, input);
  }
  throw Error(ErrorCode::Unsupported, "unknown layer kind");
}

std::vector<Tensor> forward_all(const NetworkSpec& network, const Tensor& image) {
  if (image.channels() != network.input_shape.channels) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("image has {} channels, network expects {}", image.channels(),
                            network.input_shape.channels));
  }
  std::vector<Tensor> outputs;
  outputs.reserve(network.layers.size());
  const Tensor* current = &image;
  for (const auto& layer : network.layers) {
    outputs.push_back(apply_layer(layer, *current));
    current = &outputs.back();
  }
  return outputs;
}

std::map<std::string, Tensor> forward(const NetworkSpec& network, const Tensor& image,
                                      const std::set<std::string>& taps) {
  std::size_t last = 0;
  for (const auto& tap : taps) last = std::max(last, network.index_of(tap) + 1);
  std::map<std::string, Tensor> result;
  if (taps.empty()) return result;
  if (image.channels() != network.input_shape.channels) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("image has {} channels, network expects {}", image.channels(),
                            network.input_shape.channels));
  }
  Tensor current = image;
  for (std::size_t i = 0; i < last; ++i) {
    current = apply_layer(network.layers[i], current);
    if (taps.contains(network.layers[i].name)) result.emplace(network.layers[i].name, current);
  }
  return result;
}

std::uint64_t network_hash(const NetworkSpec& network) {
  Fnv1a h;
  h.u64(network.input_shape.channels);
  h.u64(network.layers.size());
  for (const auto& l : network.layers) {
    h.text(l.name);
    h.text(to_string(l.kind));
    for (int v : {l.kernel.h, l.kernel.w, l.stride.h, l.stride.w, l.padding.h, l.padding.w,
                  l.in_channels, l.out_channels}) {
      h.u64(static_cast<std::uint64_t>(v));
    }
    h.floats(l.weights);
    h.floats(l.biases);
  }
  return h.value();
}

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

namespace {

Extent2 read_pair(const json& j, const char* key, Extent2 fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
  if (!v.is_array() || v.size() != 2) {
    throw Error(ErrorCode::Format, fmt::format("'{}' must be an integer or [h, w]", key));
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

std::vector<float> slice_blob(const std::vector<unsigned char>& blob, std::size_t offset,
                              std::size_t count, const std::string& layer) {
  if (offset % 4 != 0 || offset + count * 4 > blob.size()) {
    throw Error(ErrorCode::Format,
                fmt::format("blob length mismatch: layer '{}' range [{}, +{} reals) out of bounds", layer,
                            offset, count));
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = blob.data() + offset + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

NetworkSpec load_network(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", manifest_path.string()));
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format,
                fmt::format("manifest '{}': {}", manifest_path.string(), e.what()));
  }

  try {
    if (manifest.value("format", "") != "netsurgeon-manifest" ||
        manifest.value("version", 0) != 1) {
      throw Error(ErrorCode::VersionMismatch, "manifest is not netsurgeon-manifest version 1");
    }
    const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
    const auto blob = read_file(blob_path);
    if (blob.size() % 4 != 0) throw Error(ErrorCode::Format, "blob length mismatch");

    NetworkSpec net;
    const auto& shape = manifest.at("input_shape");
    net.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};

    std::size_t reals_used = 0;
    for (const auto& jl : manifest.at("layers")) {
      LayerSpec l;
      l.name = jl.at("name").get<std::string>();
      l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      l.kernel = read_pair(jl, "kernel", {1, 1});
      l.stride = read_pair(jl, "stride", {1, 1});
      l.padding = read_pair(jl, "padding", {0, 0});
      if (l.kind == LayerKind::Convolution) {
        l.in_channels = jl.at("in_channels").get<int>();
        l.out_channels = jl.at("out_channels").get<int>();
        const std::size_t nw =
            static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel.h * l.kernel.w;
        l.weights = slice_blob(blob, jl.at("weights_offset").get<std::size_t>(), nw, l.name);
        l.biases = slice_blob(blob, jl.at("bias_offset").get<std::size_t>(),
                              static_cast<std::size_t>(l.out_channels), l.name);
        reals_used += nw + l.out_channels;
      }
      net.layers.push_back(std::move(l));
    }
    if (reals_used * 4 != blob.size()) {
      throw Error(ErrorCode::Format,
                  fmt::format("blob length mismatch: manifest describes {} reals, blob holds {}",
                              reals_used, blob.size() / 4));
    }
    validate(net);
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format,
                fmt::format("manifest '{}': {}", manifest_path.string(), e.what()));
  }
}

void save_network(const NetworkSpec& network, const std::filesystem::path& manifest_path,
                  const std::string& blob_name) {
  validate(network);
  json layers = json::array();
  std::vector<unsigned char> blob;
  auto append = [&blob](std::span<const float> values) {
    const std::size_t offset = blob.size();
    for (float f : values) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) blob.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
    return offset;
  };
  for (const auto& l : network.layers) {
    json jl = {{"name", l.name}, {"kind", to_string(l.kind)}};
    if (l.kind != LayerKind::Relu) {
      jl["kernel"] = {l.kernel.h, l.kernel.w};
      jl["stride"] = {l.stride.h, l.stride.w};
      jl["padding"] = {l.padding.h, l.padding.w};
    }
    if (l.kind == LayerKind::Convolution) {
      jl["in_channels"] = l.in_channels;
      jl["out_channels"] = l.out_channels;
      jl["weights_offset"] = append(l.weights);
      jl["bias_offset"] = append(l.biases);
    }
    layers.push_back(std::move(jl));
  }
  json manifest = {{"format", "netsurgeon-manifest"},
                   {"version", 1},
                   {"blob", blob_name},
                   {"input_shape",
                    {network.input_shape.channels, network.input_shape.height,
                     network.input_shape.width}},
                   {"layers", std::move(layers)}};
  std::ofstream out(manifest_path);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", manifest_path.string()));
  out << manifest.dump(2) << '\n';
  const auto blob_path = manifest_path.parent_path() / blob_name;
  std::ofstream bout(blob_path, std::ios::binary);
  if (!bout) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", blob_path.string()));
  bout.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size()));
}

}  // namespace netsurgeon
