#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "netsurgeon/embedding.hpp"
#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

// Training error is measured on standardised targets, i.e. as a fraction of the
// coordinate variance.
constexpr double kConvergedMse = 0.1;
constexpr double kEarlyStopMse = 1e-5;

struct Activations {
  std::vector<double> x, h1, h2;
  std::array<double, 2> out{};
};

void dense(const std::vector<double>& w, const std::vector<double>& b,
           std::span<const double> in, std::span<double> out, bool rectify) {
  const std::size_t n_in = in.size();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double s = b[o];
    const double* row = w.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
    out[o] = rectify ? std::max(0.0, s) : s;
  }
}

void forward(const ParametricNet& net, std::span<const double> raw, Activations& a) {
  a.x.resize(net.input_dim);
  for (int k = 0; k < net.input_dim; ++k) {
    a.x[k] = (raw[k] - net.input_mean[k]) / net.input_scale[k];
  }
  a.h1.resize(ParametricNet::kHidden1);
  a.h2.resize(ParametricNet::kHidden2);
  dense(net.w1, net.b1, a.x, a.h1, true);
  dense(net.w2, net.b2, a.h1, a.h2, true);
  dense(net.w3, net.b3, a.h2, a.out, false);
}

void he_init(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out,
             std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  w.resize(fan_in * fan_out);
  for (double& v : w) v = gauss(rng);
}

}  // namespace

std::array<double, 2> ParametricNet::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_dim) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("parametric map expects dimension {}, got {}", input_dim, x.size()));
  }
  Activations a;
  forward(*this, x, a);
  return {a.out[0] * target_scale[0] + target_mean[0],
          a.out[1] * target_scale[1] + target_mean[1]};
}

ParametricNet parametric_fit(std::span<const std::vector<double>> vectors,
                             std::span<const std::array<double, 2>> coords,
                             const ParametricOptions& options) {
  if (vectors.empty() || vectors.size() != coords.size()) {
    throw Error(ErrorCode::InvalidArgument, "parametric fit needs one coordinate per vector");
  }
  if (options.epochs < 1 || options.batch_size < 1 || !(options.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid parametric training options");
  }
  const std::size_t n = vectors.size();
  const std::size_t d = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != d) throw Error(ErrorCode::ShapeMismatch, "vectors differ in dimension");
  }

  ParametricNet net;
  net.input_dim = static_cast<int>(d);
  net.input_mean.assign(d, 0.0);
  net.input_scale.assign(d, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t k = 0; k < d; ++k) net.input_mean[k] += v[k];
  }
  for (double& m : net.input_mean) m /= static_cast<double>(n);
  for (const auto& v : vectors) {
    for (std::size_t k = 0; k < d; ++k) {
      net.input_scale[k] += (v[k] - net.input_mean[k]) * (v[k] - net.input_mean[k]);
    }
  }
  for (double& s : net.input_scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) s = 1.0;
  }
  // Constant target coordinates are reproduced exactly: that output is never trained.
  bool constant[2] = {false, false};
  for (int t = 0; t < 2; ++t) {
    double mean = 0.0, var = 0.0;
    for (const auto& c : coords) mean += c[t];
    mean /= static_cast<double>(n);
    for (const auto& c : coords) var += (c[t] - mean) * (c[t] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    net.target_mean[t] = mean;
    constant[t] = sd < 1e-12;
    net.target_scale[t] = constant[t] ? 1.0 : sd;
  }

  std::mt19937_64 rng(options.seed);
  constexpr std::size_t h1 = ParametricNet::kHidden1, h2 = ParametricNet::kHidden2;
  he_init(net.w1, d, h1, rng);
  he_init(net.w2, h1, h2, rng);
  he_init(net.w3, h2, 2, rng);
  for (int t = 0; t < 2; ++t) {
    if (constant[t]) std::fill_n(net.w3.begin() + t * h2, h2, 0.0);
  }
  net.b1.assign(h1, 0.0);
  net.b2.assign(h2, 0.0);
  net.b3.assign(2, 0.0);

  std::vector<double> gw1(net.w1.size()), gb1(h1), gw2(net.w2.size()), gb2(h2), gw3(net.w3.size()),
      gb3(2);
  std::vector<double> vw1(gw1.size(), 0.0), vb1(h1, 0.0), vw2(gw2.size(), 0.0), vb2(h2, 0.0),
      vw3(gw3.size(), 0.0), vb3(2, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Activations a;
  std::vector<double> d1(h1), d2(h2);

  auto step = [&](std::vector<double>& p, std::vector<double>& v, const std::vector<double>& g,
                  double scale) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = options.momentum * v[i] - options.learning_rate * g[i] * scale;
      p[i] += v[i];
    }
  };

  double epoch_mse = 0.0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    epoch_mse = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      for (auto* g : {&gw1, &gb1, &gw2, &gb2, &gw3, &gb3}) std::fill(g->begin(), g->end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        forward(net, vectors[i], a);
        double d3[2];
        for (int t = 0; t < 2; ++t) {
          const double target = (coords[i][t] - net.target_mean[t]) / net.target_scale[t];
          d3[t] = constant[t] ? 0.0 : a.out[t] - target;
          epoch_mse += d3[t] * d3[t] / 2.0;
        }
        for (std::size_t j = 0; j < h2; ++j) {
          gw3[j] += d3[0] * a.h2[j];
          gw3[h2 + j] += d3[1] * a.h2[j];
          d2[j] = a.h2[j] > 0 ? d3[0] * net.w3[j] + d3[1] * net.w3[h2 + j] : 0.0;
        }
        gb3[0] += d3[0];
        gb3[1] += d3[1];
        std::fill(d1.begin(), d1.end(), 0.0);
        for (std::size_t j = 0; j < h2; ++j) {
          if (d2[j] == 0.0) continue;
          gb2[j] += d2[j];
          for (std::size_t k = 0; k < h1; ++k) {
            gw2[j * h1 + k] += d2[j] * a.h1[k];
            d1[k] += d2[j] * net.w2[j * h1 + k];
          }
        }
        for (std::size_t k = 0; k < h1; ++k) {
          if (a.h1[k] <= 0.0 || d1[k] == 0.0) continue;
          gb1[k] += d1[k];
          double* row = gw1.data() + k * d;
          for (std::size_t m = 0; m < d; ++m) row[m] += d1[k] * a.x[m];
        }
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      step(net.w1, vw1, gw1, scale);
      step(net.b1, vb1, gb1, scale);
      step(net.w2, vw2, gw2, scale);
      step(net.b2, vb2, gb2, scale);
      step(net.w3, vw3, gw3, scale);
      step(net.b3, vb3, gb3, scale);
    }
    epoch_mse /= static_cast<double>(n);
    if (!std::isfinite(epoch_mse)) break;
    if (epoch_mse < kEarlyStopMse) break;
  }

  // Final training error with the trained weights.
  double mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    forward(net, vectors[i], a);
    for (int t = 0; t < 2; ++t) {
      const double target = (coords[i][t] - net.target_mean[t]) / net.target_scale[t];
      mse += (a.out[t] - target) * (a.out[t] - target) / 2.0;
    }
  }
  net.training_mse = mse / static_cast<double>(n);
  net.converged = std::isfinite(net.training_mse) && net.training_mse < kConvergedMse;
  return net;
}

}  // namespace netsurgeon
