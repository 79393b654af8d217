#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace netsurgeon {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  int momentum_switch_iteration = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::uint64_t seed = 0;
};

struct TsneResult {
  std::vector<std::array<double, 2>> coords;
  /// KL(P || Q) after each iteration, measured against the unexaggerated P.
  std::vector<double> kl_history;
};

/// Exact O(n^2) t-SNE into two dimensions.
TsneResult tsne_fit(std::span<const std::vector<double>> points, const TsneOptions& options);

/// Symmetrised input affinities (row-major n x n, sums to 1).
std::vector<double> tsne_affinities(std::span<const std::vector<double>> points,
                                    double perplexity);

}  // namespace netsurgeon
