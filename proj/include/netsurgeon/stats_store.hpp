#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "netsurgeon/atlas.hpp"

namespace netsurgeon {

struct ChannelStats {
  NeuronRef neuron;
  std::uint64_t count = 0;  ///< activation cells aggregated
  double mean = 0.0;        ///< of the unthresholded activation
  double stddev = 0.0;
  double relu_mean = 0.0;  ///< of max(0, activation)
  double relu_stddev = 0.0;
  std::vector<PatchRef> top;  ///< top-K patches, same order as mine_top_activations
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Precomputed per-neuron statistics for one (network, dataset) pair.
/// File layout: docs/stats_format.md.
struct StatsStore {
  std::uint64_t network_hash = 0;
  std::uint64_t dataset_hash = 0;
  int k = 0;
  int per_image_cap = kDefaultPerImageCap;
  std::vector<ChannelStats> channels;

  const ChannelStats& find(const NeuronRef& neuron) const;
  /// First n stored patches; n must not exceed k.
  std::vector<PatchRef> top(const NeuronRef& neuron, int n) const;

  void save(const std::filesystem::path& path) const;
  static StatsStore load(const std::filesystem::path& path);
  /// Loads and throws Stale when the stored hashes differ from the given ones.
  static StatsStore load_checked(const std::filesystem::path& path, std::uint64_t network_hash,
                                 std::uint64_t dataset_hash);

  friend bool operator==(const StatsStore&, const StatsStore&) = default;
};

StatsStore precompute_stats(const NetworkSpec& network, std::span<const ImageRecord> images,
                            int k, int per_image_cap = kDefaultPerImageCap, int jobs = 1);

}  // namespace netsurgeon
