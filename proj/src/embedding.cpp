#include "netsurgeon/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

constexpr double kPowerTolerance = 1e-8;
constexpr int kPowerMaxIterations = 20000;
constexpr double kDegenerateNorm = 1e-9;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void normalize(std::vector<double>& v) {
  const double n = norm(v);
  for (double& x : v) x /= n;
}

/// y = C v for the sample covariance of the centered rows.
std::vector<double> covariance_times(const std::vector<std::vector<double>>& centered,
                                     std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  for (const auto& row : centered) {
    const double s = dot(row, v);
    for (std::size_t k = 0; k < v.size(); ++k) out[k] += s * row[k];
  }
  const double denom = static_cast<double>(centered.size() - 1);
  for (double& x : out) x /= denom;
  return out;
}

std::vector<double> power_iteration(const std::vector<std::vector<double>>& centered,
                                    const std::vector<double>* deflate, double trace,
                                    std::mt19937_64& rng) {
  const std::size_t d = centered.front().size();
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = uniform(rng);
  auto project_out = [&](std::vector<double>& u) {
    if (!deflate) return;
    const double s = dot(u, *deflate);
    for (std::size_t k = 0; k < d; ++k) u[k] -= s * (*deflate)[k];
  };
  project_out(v);
  normalize(v);
  for (int iter = 0; iter < kPowerMaxIterations; ++iter) {
    auto next = covariance_times(centered, v);
    project_out(next);
    const double n = norm(next);
    // Nothing left but rounding noise: the remaining spectrum is zero.
    if (n <= 1e-12 * trace) break;
    for (double& x : next) x /= n;
    double change = 0.0;
    for (std::size_t k = 0; k < d; ++k) change += (next[k] - v[k]) * (next[k] - v[k]);
    v = std::move(next);
    if (std::sqrt(change) < kPowerTolerance) break;
  }
  return v;
}

void fix_sign(std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (std::abs(v[k]) > std::abs(v[best])) best = k;
  }
  if (v[best] < 0) {
    for (double& x : v) x = -x;
  }
}

void check_dim(const EmbeddingBasis& basis, std::size_t n) {
  if (n != basis.dimension()) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("vector has dimension {}, embedding expects {}", n,
                            basis.dimension()));
  }
}

}  // namespace

std::string_view to_string(EmbeddingMethod method) {
  return method == EmbeddingMethod::Pca ? "pca" : "tsne";
}

EmbeddingMethod parse_embedding_method(std::string_view text) {
  if (text == "pca") return EmbeddingMethod::Pca;
  if (text == "tsne") return EmbeddingMethod::Tsne;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown embedding method '{}'", text));
}

std::string_view to_string(ConceptMode mode) {
  switch (mode) {
    case ConceptMode::ReconstructedFilter: return "reconstructed_filter";
    case ConceptMode::ProjectedSpace: return "projected_space";
    case ConceptMode::Parametric: return "parametric";
  }
  return "unknown";
}

ConceptMode parse_concept_mode(std::string_view text) {
  if (text == "reconstructed_filter") return ConceptMode::ReconstructedFilter;
  if (text == "projected_space") return ConceptMode::ProjectedSpace;
  if (text == "parametric") return ConceptMode::Parametric;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown concept mode '{}'", text));
}

std::size_t EmbeddingBasis::dimension() const {
  if (method == EmbeddingMethod::Pca) return mean.size();
  return parametric ? static_cast<std::size_t>(parametric->input_dim) : 0;
}

EmbeddingBasis pca_fit(std::span<const std::vector<double>> vectors, std::uint64_t seed) {
  if (vectors.size() < 3) {
    throw Error(ErrorCode::InvalidArgument, "PCA needs at least 3 vectors");
  }
  const std::size_t d = vectors.front().size();
  if (d < 2) throw Error(ErrorCode::Degenerate, "PCA needs vectors of dimension >= 2");
  for (const auto& v : vectors) {
    if (v.size() != d) throw Error(ErrorCode::ShapeMismatch, "PCA vectors differ in dimension");
  }

  EmbeddingBasis basis;
  basis.method = EmbeddingMethod::Pca;
  basis.mean.assign(d, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t k = 0; k < d; ++k) basis.mean[k] += v[k];
  }
  for (double& m : basis.mean) m /= static_cast<double>(vectors.size());

  std::vector<std::vector<double>> centered;
  centered.reserve(vectors.size());
  double trace = 0.0;
  for (const auto& v : vectors) {
    std::vector<double> c(d);
    for (std::size_t k = 0; k < d; ++k) {
      c[k] = v[k] - basis.mean[k];
      trace += c[k] * c[k];
    }
    centered.push_back(std::move(c));
  }
  trace /= static_cast<double>(vectors.size() - 1);
  if (trace <= 0.0) throw Error(ErrorCode::Degenerate, "all vectors are identical");

  std::mt19937_64 rng(seed);
  basis.v1 = power_iteration(centered, nullptr, trace, rng);
  fix_sign(basis.v1);
  basis.eigenvalues[0] = dot(basis.v1, covariance_times(centered, basis.v1));
  basis.v2 = power_iteration(centered, &basis.v1, trace, rng);
  // Re-orthogonalise against rounding before fixing the sign.
  const double overlap = dot(basis.v2, basis.v1);
  for (std::size_t k = 0; k < d; ++k) basis.v2[k] -= overlap * basis.v1[k];
  normalize(basis.v2);
  fix_sign(basis.v2);
  basis.eigenvalues[1] = dot(basis.v2, covariance_times(centered, basis.v2));
  if (!(basis.eigenvalues[1] > 1e-12 * trace)) {
    throw Error(ErrorCode::Degenerate, "data has rank < 2 after centering");
  }

  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto c = pca_project(basis, vectors[i]);
    basis.points.push_back({std::to_string(i), c[0], c[1]});
  }
  return basis;
}

std::array<double, 2> pca_project(const EmbeddingBasis& basis, std::span<const double> x) {
  if (basis.method != EmbeddingMethod::Pca) {
    throw Error(ErrorCode::Unsupported, "pca_project needs a PCA basis");
  }
  check_dim(basis, x.size());
  double c1 = 0.0, c2 = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double centered = x[k] - basis.mean[k];
    c1 += basis.v1[k] * centered;
    c2 += basis.v2[k] * centered;
  }
  return {c1, c2};
}

std::array<double, 2> embed(const EmbeddingBasis& basis, std::span<const double> x) {
  if (basis.method == EmbeddingMethod::Pca) return pca_project(basis, x);
  if (!basis.parametric) {
    throw Error(ErrorCode::Unsupported, "t-SNE embedding has no parametric map");
  }
  check_dim(basis, x.size());
  return (*basis.parametric)(x);
}

FilterLine filter_line(const EmbeddingBasis& basis, std::span<const double> weights,
                       double bias) {
  if (basis.method != EmbeddingMethod::Pca) {
    throw Error(ErrorCode::Unsupported, "a filter cannot be projected into a t-SNE embedding");
  }
  check_dim(basis, weights.size());
  FilterLine line;
  line.normal1 = dot(basis.v1, weights);
  line.normal2 = dot(basis.v2, weights);
  line.offset = bias + dot(weights, basis.mean);
  line.visible = std::hypot(line.normal1, line.normal2) > kDegenerateNorm * norm(weights);
  return line;
}

void validate(const Boundary& boundary) {
  if (!std::isfinite(boundary.alpha1) || !std::isfinite(boundary.alpha2) ||
      !std::isfinite(boundary.beta)) {
    throw Error(ErrorCode::InvalidArgument, "boundary coefficients must be finite");
  }
  if (std::hypot(boundary.alpha1, boundary.alpha2) < kDegenerateNorm) {
    throw Error(ErrorCode::Degenerate, "boundary normal (alpha1, alpha2) is zero");
  }
}

ConceptFilter backproject_boundary(std::shared_ptr<const EmbeddingBasis> basis,
                                   const Boundary& boundary, std::string name) {
  if (!basis || basis->method != EmbeddingMethod::Pca) {
    throw Error(ErrorCode::Unsupported, "back-projection needs a PCA basis");
  }
  validate(boundary);
  RealizedFilter filter;
  filter.weights.resize(basis->dimension());
  for (std::size_t k = 0; k < filter.weights.size(); ++k) {
    filter.weights[k] = boundary.alpha1 * basis->v1[k] + boundary.alpha2 * basis->v2[k];
  }
  filter.bias = boundary.beta - dot(filter.weights, basis->mean);

  ConceptFilter cf;
  cf.name = std::move(name);
  cf.basis = std::move(basis);
  cf.boundary = boundary;
  cf.realized = std::move(filter);
  cf.mode = ConceptMode::ReconstructedFilter;
  return cf;
}

ConceptFilter make_concept(std::shared_ptr<const EmbeddingBasis> basis, const Boundary& boundary,
                           std::string name) {
  if (!basis) throw Error(ErrorCode::InvalidArgument, "concept needs an embedding");
  if (basis->method == EmbeddingMethod::Pca) {
    return backproject_boundary(std::move(basis), boundary, std::move(name));
  }
  validate(boundary);
  if (!basis->parametric) {
    throw Error(ErrorCode::Unsupported, "t-SNE embedding has no parametric map");
  }
  ConceptFilter cf;
  cf.name = std::move(name);
  cf.basis = std::move(basis);
  cf.boundary = boundary;
  cf.mode = ConceptMode::Parametric;
  return cf;
}

double concept_score(const ConceptFilter& cf, std::span<const double> x) {
  if (!cf.basis) throw Error(ErrorCode::InvalidArgument, "concept has no embedding");
  check_dim(*cf.basis, x.size());
  const auto& b = cf.boundary;
  switch (cf.mode) {
    case ConceptMode::ReconstructedFilter: {
      if (!cf.realized) {
        throw Error(ErrorCode::Unsupported, "concept has no reconstructed filter");
      }
      return std::max(0.0, dot(cf.realized->weights, x) + cf.realized->bias);
    }
    case ConceptMode::ProjectedSpace: {
      const auto c = pca_project(*cf.basis, x);
      return std::max(0.0, b.alpha1 * c[0] + b.alpha2 * c[1] + b.beta);
    }
    case ConceptMode::Parametric: {
      const auto c = embed(*cf.basis, x);
      return std::max(0.0, b.alpha1 * c[0] + b.alpha2 * c[1] + b.beta);
    }
  }
  return 0.0;
}

double concept_score(const ConceptFilter& cf, std::span<const float> x) {
  const std::vector<double> widened(x.begin(), x.end());
  return concept_score(cf, std::span<const double>(widened));
}

Tensor concept_heatmap(const NetworkSpec& network, const std::vector<Tensor>& outputs,
                       const Tensor& image, const ConceptFilter& cf) {
  if (!cf.basis) throw Error(ErrorCode::InvalidArgument, "concept has no embedding");
  const auto& basis = *cf.basis;
  if (basis.network_hash != network_hash(network)) {
    throw Error(ErrorCode::Stale,
                fmt::format("concept '{}' was built on a different network", cf.id));
  }
  const std::size_t index = resolve_neuron(network, basis.source_neuron);
  const auto& layer = network.layers[index];
  const Tensor& input = index == 0 ? image : outputs[index - 1];
  const Tensor& reference = outputs[index];
  const std::size_t expected =
      static_cast<std::size_t>(layer.in_channels) * layer.kernel.h * layer.kernel.w;
  if (basis.dimension() != expected) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("concept dimension {} does not match layer '{}' window {}",
                            basis.dimension(), layer.name, expected));
  }

  Tensor heat({1, reference.height(), reference.width()});
  if (cf.mode == ConceptMode::ReconstructedFilter) {
    // An add-on convolution with kernel w', bias b', followed by relu.
    LayerSpec addon = layer;
    addon.name = layer.name + "/concept";
    addon.out_channels = 1;
    addon.weights.assign(cf.realized->weights.begin(), cf.realized->weights.end());
    addon.biases = {static_cast<float>(cf.realized->bias)};
    Tensor response = apply_layer(addon, input);
    for (float& v : response.data()) v = std::max(v, 0.0f);
    return response;
  }
  for (int y = 0; y < reference.height(); ++y) {
    for (int x = 0; x < reference.width(); ++x) {
      const auto window = read_window(layer, input, {y, x});
      heat.at(0, y, x) = static_cast<float>(concept_score(cf, std::span<const float>(window)));
    }
  }
  return heat;
}

Tensor concept_heatmap(const NetworkSpec& network, const Tensor& image,
                       const ConceptFilter& cf) {
  return concept_heatmap(network, forward_all(network, image), image, cf);
}

EmbeddingRun fit_embedding(const NetworkSpec& network, std::span<const ImageRecord> images,
                           const EmbeddingRequest& request) {
  const std::size_t layer_index = resolve_neuron(network, request.neuron);
  if (request.n < 3) throw Error(ErrorCode::InvalidArgument, "an embedding needs n >= 3");
  EmbeddingRun run;
  run.patches = mine_top_activations(network, images, request.neuron, request.n,
                                     request.per_image_cap, request.jobs);
  if (run.patches.size() < 3) {
    throw Error(ErrorCode::Degenerate,
                fmt::format("only {} patches found for {}:{}", run.patches.size(),
                            request.neuron.layer, request.neuron.channel));
  }
  const auto neighborhoods = extract_neighborhoods(network, images, run.patches, request.jobs);
  std::vector<std::vector<double>> vectors;
  vectors.reserve(neighborhoods.size());
  for (const auto& nb : neighborhoods) vectors.emplace_back(nb.values.begin(), nb.values.end());

  if (request.method == EmbeddingMethod::Pca) {
    run.basis = pca_fit(vectors, request.seed);
    const LayerSpec& layer = network.layers[layer_index];
    const auto w = layer.filter(request.neuron.channel);
    const std::vector<double> weights(w.begin(), w.end());
    run.line = filter_line(run.basis, weights, layer.biases[request.neuron.channel]);
  } else {
    const double n = static_cast<double>(vectors.size());
    TsneOptions options;
    options.seed = request.seed;
    options.iterations = request.tsne_iterations;
    options.perplexity = request.perplexity;
    if (options.perplexity >= n / 3.0) {
      options.perplexity = (n - 1.0) / 3.0;
      run.warnings.push_back(fmt::format("perplexity lowered from {} to {} for {} points",
                                         request.perplexity, options.perplexity, vectors.size()));
    }
    const TsneResult fit = tsne_fit(vectors, options);
    ParametricOptions popts = request.parametric;
    popts.seed = request.seed;
    run.basis.method = EmbeddingMethod::Tsne;
    run.basis.parametric = parametric_fit(vectors, fit.coords, popts);
    if (!run.basis.parametric->converged) {
      run.warnings.push_back(
          fmt::format("parametric map did not converge (training error {} of coordinate variance)",
                      run.basis.parametric->training_mse));
    }
    for (std::size_t i = 0; i < fit.coords.size(); ++i) {
      run.basis.points.push_back({std::to_string(i), fit.coords[i][0], fit.coords[i][1]});
    }
  }
  run.basis.source_neuron = request.neuron;
  run.basis.network_hash = network_hash(network);
  return run;
}

std::string format_points(const EmbeddingBasis& basis) {
  std::string out;
  for (const auto& p : basis.points) out += fmt::format("{} {} {}\n", p.id, p.c1, p.c2);
  return out;
}

}  // namespace netsurgeon
