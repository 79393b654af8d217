#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netsurgeon/atlas.hpp"
#include "netsurgeon/tsne.hpp"

namespace netsurgeon {

enum class EmbeddingMethod { Pca, Tsne };
std::string_view to_string(EmbeddingMethod method);
EmbeddingMethod parse_embedding_method(std::string_view text);

/// Feedforward regressor in -> 64 -> 32 -> 2 with rectified hidden units, used as the
/// out-of-sample map of a t-SNE embedding. Inputs and targets are standardised internally.
struct ParametricNet {
  static constexpr int kHidden1 = 64;
  static constexpr int kHidden2 = 32;

  int input_dim = 0;
  std::vector<double> input_mean, input_scale;
  std::vector<double> w1, b1;  // kHidden1 x input_dim
  std::vector<double> w2, b2;  // kHidden2 x kHidden1
  std::vector<double> w3, b3;  // 2 x kHidden2
  std::array<double, 2> target_mean{0, 0};
  std::array<double, 2> target_scale{1, 1};
  double training_mse = 0.0;  ///< mean squared error as a fraction of coordinate variance
  bool converged = false;

  std::array<double, 2> operator()(std::span<const double> x) const;
  friend bool operator==(const ParametricNet&, const ParametricNet&) = default;
};

struct ParametricOptions {
  int epochs = 3000;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

ParametricNet parametric_fit(std::span<const std::vector<double>> vectors,
                             std::span<const std::array<double, 2>> coords,
                             const ParametricOptions& options);

struct TrainingPoint {
  std::string id;
  double c1 = 0.0;
  double c2 = 0.0;
  friend bool operator==(const TrainingPoint&, const TrainingPoint&) = default;
};

/// A fitted 2-D projection of one neuron's input neighborhoods.
struct EmbeddingBasis {
  std::string id;
  EmbeddingMethod method = EmbeddingMethod::Pca;
  NeuronRef source_neuron;
  std::uint64_t network_hash = 0;
  std::vector<double> mean;  ///< pca only
  std::vector<double> v1;    ///< pca only
  std::vector<double> v2;    ///< pca only
  std::array<double, 2> eigenvalues{0, 0};  ///< pca only
  std::vector<TrainingPoint> points;
  std::optional<ParametricNet> parametric;  ///< tsne only

  std::size_t dimension() const;
  friend bool operator==(const EmbeddingBasis&, const EmbeddingBasis&) = default;
};

/// Top-2 principal axes by power iteration with deflation. Needs at least 3 vectors of
/// rank >= 2 after centering. Point ids default to their index.
EmbeddingBasis pca_fit(std::span<const std::vector<double>> vectors, std::uint64_t seed = 0);

std::array<double, 2> pca_project(const EmbeddingBasis& basis, std::span<const double> x);

/// Coordinates of x in any basis: PCA projection or the parametric map.
std::array<double, 2> embed(const EmbeddingBasis& basis, std::span<const double> x);

/// A neuron's linear threshold function drawn in a PCA plane.
struct FilterLine {
  double normal1 = 0.0;
  double normal2 = 0.0;
  double offset = 0.0;
  bool visible = true;  ///< false when the filter is orthogonal to the plane
};

FilterLine filter_line(const EmbeddingBasis& basis, std::span<const double> weights, double bias);

/// alpha1 * c1 + alpha2 * c2 + beta = 0 in the embedded plane.
struct Boundary {
  double alpha1 = 1.0;
  double alpha2 = 0.0;
  double beta = 0.0;
  friend bool operator==(const Boundary&, const Boundary&) = default;
};

void validate(const Boundary& boundary);

enum class ConceptMode { ReconstructedFilter, ProjectedSpace, Parametric };
std::string_view to_string(ConceptMode mode);
ConceptMode parse_concept_mode(std::string_view text);

struct RealizedFilter {
  std::vector<double> weights;
  double bias = 0.0;
  friend bool operator==(const RealizedFilter&, const RealizedFilter&) = default;
};

/// A user-drawn halfspace turned into a new unit on the basis' source layer.
struct ConceptFilter {
  std::string id;
  std::string name;
  std::shared_ptr<const EmbeddingBasis> basis;
  Boundary boundary;
  std::optional<RealizedFilter> realized;  ///< present iff the basis is PCA
  ConceptMode mode = ConceptMode::ReconstructedFilter;
  bool stale = false;
};

/// w' = alpha1 v1 + alpha2 v2, b' = beta - w'.mean. PCA bases only.
ConceptFilter backproject_boundary(std::shared_ptr<const EmbeddingBasis> basis,
                                   const Boundary& boundary, std::string name = {});

/// PCA bases are back-projected; t-SNE bases score through their parametric map.
ConceptFilter make_concept(std::shared_ptr<const EmbeddingBasis> basis, const Boundary& boundary,
                           std::string name = {});

double concept_score(const ConceptFilter& filter, std::span<const double> x);
double concept_score(const ConceptFilter& filter, std::span<const float> x);

/// Concept response at every position of the source layer, given all layer outputs of
/// the image (forward_all).
Tensor concept_heatmap(const NetworkSpec& network, const std::vector<Tensor>& outputs,
                       const Tensor& image, const ConceptFilter& filter);

Tensor concept_heatmap(const NetworkSpec& network, const Tensor& image,
                       const ConceptFilter& filter);

/// One line per training point: "id c1 c2".
std::string format_points(const EmbeddingBasis& basis);

inline constexpr int kDefaultEmbeddingSize = 200;

struct EmbeddingRequest {
  NeuronRef neuron;
  EmbeddingMethod method = EmbeddingMethod::Pca;
  int n = kDefaultEmbeddingSize;  ///< top patches embedded
  std::uint64_t seed = 0;
  double perplexity = 30.0;  ///< tsne; lowered to (n - 1) / 3 when infeasible
  int tsne_iterations = 1000;
  ParametricOptions parametric;  ///< its seed is replaced by `seed`
  int per_image_cap = kDefaultPerImageCap;
  int jobs = 1;
};

struct EmbeddingRun {
  EmbeddingBasis basis;
  std::vector<PatchRef> patches;        ///< one per basis point, same order
  std::optional<FilterLine> line;       ///< the source neuron's own filter (pca)
  std::vector<std::string> warnings;
};

/// Mines the neuron's top patches, reads their input neighborhoods and fits the basis.
EmbeddingRun fit_embedding(const NetworkSpec& network, std::span<const ImageRecord> images,
                           const EmbeddingRequest& request);

}  // namespace netsurgeon
