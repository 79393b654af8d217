// Independent reference implementations used only by tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "netsurgeon/network.hpp"

namespace oracle {

using netsurgeon::LayerSpec;
using netsurgeon::Tensor;

/// Cross-correlation by explicit zero padding followed by a plain triple loop.
inline Tensor conv_triple_loop(const Tensor& in, const LayerSpec& l) {
  const int ph = l.padding.h, pw = l.padding.w;
  const int H = in.height() + 2 * ph, W = in.width() + 2 * pw;
  std::vector<double> padded(static_cast<std::size_t>(in.channels()) * H * W, 0.0);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < in.width(); ++x)
        padded[(c * H + y + ph) * W + x + pw] = in.at(c, y, x);
  const int oh = (H - l.kernel.h) / l.stride.h + 1;
  const int ow = (W - l.kernel.w) / l.stride.w + 1;
  Tensor out({l.out_channels, oh, ow});
  for (int o = 0; o < l.out_channels; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = l.biases[o];
        for (int c = 0; c < l.in_channels; ++c)
          for (int i = 0; i < l.kernel.h; ++i)
            for (int j = 0; j < l.kernel.w; ++j)
              acc += l.weights[((o * l.in_channels + c) * l.kernel.h + i) * l.kernel.w + j] *
                     padded[(c * H + y * l.stride.h + i) * W + x * l.stride.w + j];
        out.at(o, y, x) = static_cast<float>(acc);
      }
  return out;
}

/// Max pooling by explicit -inf padding followed by a plain window scan.
inline Tensor pool_triple_loop(const Tensor& in, const LayerSpec& l) {
  const int ph = l.padding.h, pw = l.padding.w;
  const int H = in.height() + 2 * ph, W = in.width() + 2 * pw;
  const float ninf = -std::numeric_limits<float>::infinity();
  std::vector<float> padded(static_cast<std::size_t>(in.channels()) * H * W, ninf);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < in.width(); ++x) padded[(c * H + y + ph) * W + x + pw] = in.at(c, y, x);
  const int oh = (H - l.kernel.h) / l.stride.h + 1;
  const int ow = (W - l.kernel.w) / l.stride.w + 1;
  Tensor out({in.channels(), oh, ow});
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float m = ninf;
        for (int i = 0; i < l.kernel.h; ++i)
          for (int j = 0; j < l.kernel.w; ++j)
            m = std::max(m, padded[(c * H + y * l.stride.h + i) * W + x * l.stride.w + j]);
        out.at(c, y, x) = m;
      }
  return out;
}

/// Network forward through the oracle layers.
inline Tensor forward_reference(const netsurgeon::NetworkSpec& net, const Tensor& image,
                                std::size_t upto) {
  Tensor cur = image;
  for (std::size_t i = 0; i <= upto; ++i) {
    const auto& l = net.layers[i];
    if (l.kind == netsurgeon::LayerKind::Convolution) {
      cur = conv_triple_loop(cur, l);
    } else if (l.kind == netsurgeon::LayerKind::MaxPool) {
      cur = pool_triple_loop(cur, l);
    } else {
      for (float& v : cur.data()) v = v > 0 ? v : 0.0f;
    }
  }
  return cur;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

inline Tensor random_tensor(std::mt19937_64& rng, netsurgeon::Shape3 shape, float lo = -1.0f,
                            float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  Tensor t(shape);
  for (float& v : t.data()) v = d(rng);
  return t;
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t n, float lo = -1.0f,
                                        float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

}  // namespace oracle

namespace oracle {

/// Input pixels whose perturbation changes output unit (row, col) of channel 0 of
/// layer `upto`. Uses the oracle forward, so it is independent of the engine.
inline std::vector<std::pair<int, int>> perturbation_set(const netsurgeon::NetworkSpec& net,
                                                         const Tensor& image, std::size_t upto,
                                                         int row, int col, float delta = 1e4f) {
  const Tensor base = forward_reference(net, image, upto);
  const float ref = base.at(0, row, col);
  std::vector<std::pair<int, int>> changed;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      Tensor probe = image;
      for (int c = 0; c < image.channels(); ++c) probe.at(c, y, x) += delta;
      if (forward_reference(net, probe, upto).at(0, row, col) != ref) changed.emplace_back(y, x);
    }
  return changed;
}

}  // namespace oracle

namespace oracle {

/// Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues descending with unit eigenvectors as columns (vectors[i] is the
/// i-th eigenvector).
struct EigenSystem {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};

inline EigenSystem jacobi_eigen(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  EigenSystem out;
  for (std::size_t i : order) {
    out.values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

/// Sample covariance (divisor n - 1) of row vectors.
inline std::vector<std::vector<double>> covariance(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : x)
    for (std::size_t k = 0; k < d; ++k) mean[k] += r[k] / n;
  std::vector<std::vector<double>> c(d, std::vector<double>(d, 0.0));
  for (const auto& r : x)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1);
  return c;
}

/// Largest principal angle (radians) between span{a1, a2} and span{b1, b2}; all unit,
/// each pair orthonormal.
inline double max_principal_angle(const std::vector<double>& a1, const std::vector<double>& a2,
                                  const std::vector<double>& b1, const std::vector<double>& b2) {
  auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  };
  const double m11 = dot(a1, b1), m12 = dot(a1, b2), m21 = dot(a2, b1), m22 = dot(a2, b2);
  // Singular values of the 2x2 overlap matrix are the cosines of the principal angles.
  const double p = m11 * m11 + m12 * m12 + m21 * m21 + m22 * m22;
  const double det = m11 * m22 - m12 * m21;
  const double disc = std::sqrt(std::max(0.0, p * p / 4 - det * det));
  const double smallest = std::sqrt(std::max(0.0, p / 2 - disc));
  return std::acos(std::min(1.0, smallest));
}

}  // namespace oracle
