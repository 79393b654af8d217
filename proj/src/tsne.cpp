#include "netsurgeon/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

constexpr double kEntropyTolerance = 1e-5;
constexpr int kMaxBisectionSteps = 50;

std::vector<double> squared_distances(std::span<const std::vector<double>> points) {
  const std::size_t n = points.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) {
        const double diff = points[i][k] - points[j][k];
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

void check_inputs(std::span<const std::vector<double>> points, double perplexity) {
  const std::size_t n = points.size();
  if (n < 3 || n > 5000) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("t-SNE needs between 3 and 5000 points, got {}", n));
  }
  for (const auto& p : points) {
    if (p.size() != points[0].size()) {
      throw Error(ErrorCode::ShapeMismatch, "t-SNE points differ in dimension");
    }
  }
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n) / 3.0) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("perplexity {} infeasible for {} points (must be in (0, n/3))",
                            perplexity, n));
  }
}

}  // namespace

std::vector<double> tsne_affinities(std::span<const std::vector<double>> points,
                                    double perplexity) {
  check_inputs(points, perplexity);
  const std::size_t n = points.size();
  const auto dist = squared_distances(points);
  const double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, dist[i * n + j]);
    }
    double beta = 1.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step < kMaxBisectionSteps; ++step) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = j == i ? 0.0 : std::exp(-beta * (dist[i * n + j] - min_d));
        p[i * n + j] = v;
        sum += v;
      }
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) weighted += (dist[i * n + j] - min_d) * p[i * n + j];
      // Entropy of the row distribution in nats.
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;

      const double diff = entropy - target;
      if (std::abs(diff) < kEntropyTolerance) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
  }

  std::vector<double> sym(n * n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sym[i * n + j] = p[i * n + j] + p[j * n + i];
      total += sym[i * n + j];
    }
  }
  for (double& v : sym) v = std::max(v / total, std::numeric_limits<double>::min());
  for (std::size_t i = 0; i < n; ++i) sym[i * n + i] = 0.0;
  return sym;
}

namespace {

// KL(P || Q) at the given positions; `num` is scratch space of n * n.
double objective(const std::vector<double>& P, const std::vector<double>& y,
                 std::vector<double>& num) {
  const std::size_t n = y.size() / 2;
  double zq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double q = 1.0 / (1.0 + dx * dx + dy * dy);
      num[i * n + j] = num[j * n + i] = q;
      zq += 2.0 * q;
    }
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || P[i * n + j] <= 0.0) continue;
      kl += P[i * n + j] * std::log(P[i * n + j] / (num[i * n + j] / zq));
    }
  }
  return kl;
}

}  // namespace

TsneResult tsne_fit(std::span<const std::vector<double>> points, const TsneOptions& options) {
  if (options.iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
  const auto P = tsne_affinities(points, options.perplexity);
  const std::size_t n = points.size();

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (double& v : y) v = gauss(rng);

  std::vector<double> num(n * n);
  TsneResult result;
  result.kl_history.reserve(options.iterations);

  for (int iter = 0; iter < options.iterations; ++iter) {
    const double exaggeration =
        iter < options.exaggeration_iterations ? options.exaggeration : 1.0;
    const double momentum = iter < options.momentum_switch_iteration ? options.initial_momentum
                                                                      : options.final_momentum;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j];
        const double dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = num[i * n + j];
        const double mult = (exaggeration * P[i * n + j] - q / z) * q;
        grad[2 * i] += 4.0 * mult * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += 4.0 * mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
    }

    const std::vector<double> previous = y;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = same_sign ? gains[k] * 0.8 : gains[k] + 0.2;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - options.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double kl = objective(P, y, num);

    // Once the exaggerated phase is over, a step that raises the objective is rejected:
    // momentum and gains restart and plain gradient steps are halved until one does not.
    if (iter >= options.exaggeration_iterations && !result.kl_history.empty() &&
        kl > result.kl_history.back()) {
      std::fill(update.begin(), update.end(), 0.0);
      std::fill(gains.begin(), gains.end(), 1.0);
      bool accepted = false;
      for (double step = options.learning_rate; step > options.learning_rate * 1e-9; step *= 0.5) {
        for (std::size_t k = 0; k < 2 * n; ++k) y[k] = previous[k] - step * grad[k];
        kl = objective(P, y, num);
        if (kl <= result.kl_history.back()) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        y = previous;
        kl = result.kl_history.back();
      }
    }

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) mx += y[2 * i], my += y[2 * i + 1];
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) y[2 * i] -= mx, y[2 * i + 1] -= my;
    result.kl_history.push_back(kl);
  }

  result.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.coords[i] = {y[2 * i], y[2 * i + 1]};
  return result;
}

}  // namespace netsurgeon
