#include "netsurgeon/stats_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/parallel.hpp"

namespace netsurgeon {

namespace {

constexpr const char* kMagic = "NETSURGEON-STATS";
constexpr int kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.put(static_cast<char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(static_cast<char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw Error(ErrorCode::Format, "stats file: string too long");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorCode::Format, "stats file truncated");
    }
  }
  std::istream& in_;
};

struct Accumulator {
  double sum = 0, sum_sq = 0, relu_sum = 0, relu_sum_sq = 0;
  std::uint64_t count = 0;
};

}  // namespace

const ChannelStats& StatsStore::find(const NeuronRef& neuron) const {
  for (const auto& c : channels) {
    if (c.neuron == neuron) return c;
  }
  throw Error(ErrorCode::NotFound,
              fmt::format("no statistics for {}:{}", neuron.layer, neuron.channel));
}

std::vector<PatchRef> StatsStore::top(const NeuronRef& neuron, int n) const {
  if (n < 1 || n > k) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("requested top {} but the store holds top {}", n, k));
  }
  const auto& stored = find(neuron).top;
  return {stored.begin(), stored.begin() + std::min<std::size_t>(n, stored.size())};
}

void StatsStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
  out << kMagic << ' ' << kVersion << '\n'
      << "network_hash " << fmt::format("{:016x}", network_hash) << '\n'
      << "dataset_hash " << fmt::format("{:016x}", dataset_hash) << '\n'
      << "k " << k << '\n'
      << "per_image_cap " << per_image_cap << '\n'
      << "records " << channels.size() << '\n'
      << "end\n";
  Writer w(out);
  for (const auto& c : channels) {
    w.str(c.neuron.layer);
    w.i32(c.neuron.channel);
    w.u64(c.count);
    w.f64(c.mean);
    w.f64(c.stddev);
    w.f64(c.relu_mean);
    w.f64(c.relu_stddev);
    w.u32(static_cast<std::uint32_t>(c.top.size()));
    for (const auto& p : c.top) {
      w.str(p.image_id);
      w.i32(p.position.row);
      w.i32(p.position.col);
      w.f32(p.activation);
      w.i32(p.rect.x0);
      w.i32(p.rect.y0);
      w.i32(p.rect.x1);
      w.i32(p.rect.y1);
    }
  }
  if (!out) throw Error(ErrorCode::Io, fmt::format("write to '{}' failed", path.string()));
}

StatsStore StatsStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  StatsStore store;
  std::string line;
  std::size_t records = 0;
  bool header_done = false;
  bool magic_seen = false;
  while (!header_done && std::getline(in, line)) {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (!magic_seen) {
      int version = 0;
      fields >> version;
      if (key != kMagic) throw Error(ErrorCode::Format, "not a stats file");
      if (version != kVersion) {
        throw Error(ErrorCode::VersionMismatch,
                    fmt::format("stats file version {} (expected {})", version, kVersion));
      }
      magic_seen = true;
    } else if (key == "network_hash") {
      std::string hex;
      fields >> hex;
      store.network_hash = std::stoull(hex, nullptr, 16);
    } else if (key == "dataset_hash") {
      std::string hex;
      fields >> hex;
      store.dataset_hash = std::stoull(hex, nullptr, 16);
    } else if (key == "k") {
      fields >> store.k;
    } else if (key == "per_image_cap") {
      fields >> store.per_image_cap;
    } else if (key == "records") {
      fields >> records;
    } else if (key == "end") {
      header_done = true;
    }
  }
  if (!header_done) throw Error(ErrorCode::Format, "stats file header incomplete");

  Reader r(in);
  for (std::size_t i = 0; i < records; ++i) {
    ChannelStats c;
    c.neuron.layer = r.str();
    c.neuron.channel = r.i32();
    c.count = r.u64();
    c.mean = r.f64();
    c.stddev = r.f64();
    c.relu_mean = r.f64();
    c.relu_stddev = r.f64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t j = 0; j < n; ++j) {
      PatchRef p;
      p.image_id = r.str();
      p.layer = c.neuron.layer;
      p.channel = c.neuron.channel;
      p.position.row = r.i32();
      p.position.col = r.i32();
      p.activation = r.f32();
      p.rect.x0 = r.i32();
      p.rect.y0 = r.i32();
      p.rect.x1 = r.i32();
      p.rect.y1 = r.i32();
      c.top.push_back(std::move(p));
    }
    store.channels.push_back(std::move(c));
  }
  return store;
}

StatsStore StatsStore::load_checked(const std::filesystem::path& path,
                                    std::uint64_t network_hash, std::uint64_t dataset_hash) {
  StatsStore store = load(path);
  if (store.network_hash != network_hash || store.dataset_hash != dataset_hash) {
    throw Error(ErrorCode::Stale,
                fmt::format("stats in '{}' were computed for a different network or dataset",
                            path.string()));
  }
  return store;
}

StatsStore precompute_stats(const NetworkSpec& network, std::span<const ImageRecord> images,
                            int k, int per_image_cap, int jobs) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (per_image_cap < 1) throw Error(ErrorCode::InvalidArgument, "per_image_cap must be >= 1");
  const auto geometry = layer_geometry(network);

  std::vector<NeuronRef> neurons;
  std::vector<std::size_t> layer_of;
  for (std::size_t i = 0; i < network.layers.size(); ++i) {
    const auto& l = network.layers[i];
    if (l.kind != LayerKind::Convolution) continue;
    for (int c = 0; c < l.out_channels; ++c) {
      neurons.push_back({l.name, c});
      layer_of.push_back(i);
    }
  }

  struct PerImage {
    std::vector<Accumulator> acc;
    std::vector<std::vector<PatchRef>> candidates;
  };
  std::vector<PerImage> partial(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    const auto outputs = forward_all(network, images[i].pixels);
    auto& part = partial[i];
    part.acc.resize(neurons.size());
    part.candidates.resize(neurons.size());
    for (std::size_t n = 0; n < neurons.size(); ++n) {
      const Tensor& map = outputs[layer_of[n]];
      auto& a = part.acc[n];
      for (float v : map.plane(neurons[n].channel)) {
        const double r = std::max(0.0f, v);
        a.sum += v;
        a.sum_sq += static_cast<double>(v) * v;
        a.relu_sum += r;
        a.relu_sum_sq += r * r;
        ++a.count;
      }
      part.candidates[n] = image_candidates(geometry, images[i], map, neurons[n], per_image_cap);
    }
  });

  StatsStore store;
  store.network_hash = netsurgeon::network_hash(network);
  store.dataset_hash = images_hash(images);
  store.k = k;
  store.per_image_cap = per_image_cap;
  for (std::size_t n = 0; n < neurons.size(); ++n) {
    Accumulator total;
    std::vector<PatchRef> merged;
    for (const auto& part : partial) {
      total.sum += part.acc[n].sum;
      total.sum_sq += part.acc[n].sum_sq;
      total.relu_sum += part.acc[n].relu_sum;
      total.relu_sum_sq += part.acc[n].relu_sum_sq;
      total.count += part.acc[n].count;
      merged.insert(merged.end(), part.candidates[n].begin(), part.candidates[n].end());
    }
    std::sort(merged.begin(), merged.end(), [](const PatchRef& a, const PatchRef& b) {
      if (a.activation != b.activation) return a.activation > b.activation;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return a.position < b.position;
    });
    if (merged.size() > static_cast<std::size_t>(k)) merged.resize(k);

    ChannelStats c;
    c.neuron = neurons[n];
    c.count = total.count;
    if (total.count > 0) {
      const double cnt = static_cast<double>(total.count);
      c.mean = total.sum / cnt;
      c.stddev = std::sqrt(std::max(0.0, total.sum_sq / cnt - c.mean * c.mean));
      c.relu_mean = total.relu_sum / cnt;
      c.relu_stddev = std::sqrt(std::max(0.0, total.relu_sum_sq / cnt - c.relu_mean * c.relu_mean));
    }
    c.top = std::move(merged);
    store.channels.push_back(std::move(c));
  }
  return store;
}

}  // namespace netsurgeon
