#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/image.hpp"
#include "kamim/rng.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

/// Post-softmax attention for `layers` layers of `heads` maps, each N x N
/// over a grid x grid token layout. Token centers are `pitch` pixels apart.
struct AttentionStack {
  int layers = 0;
  int heads = 0;
  int grid = 0;
  double pitch = 1.0;
  std::vector<float> values;  // [layers][heads][N][N]

  std::int64_t tokens() const { return static_cast<std::int64_t>(grid) * grid; }
  const float* map(int layer, int head) const {
    return values.data() + (static_cast<std::int64_t>(layer) * heads + head) * tokens() * tokens();
  }
};

using LayerCurve = std::vector<double>;

/// Builds a stack from per-layer [B, heads, N, N] tensors; images are folded
/// into the head axis.
inline AttentionStack attention_stack(const std::vector<Tensor>& per_layer, int grid, double pitch) {
  AttentionStack s;
  s.layers = static_cast<int>(per_layer.size());
  s.grid = grid;
  s.pitch = pitch;
  const std::int64_t N = s.tokens();
  for (const auto& a : per_layer) {
    if (a.rank() != 4 || a.dim(2) != N || a.dim(3) != N) {
      throw ShapeError("attention_stack: expected [B, heads, " + std::to_string(N) + ", " + std::to_string(N) +
                       "], got " + shape_str(a.shape()));
    }
    const int h = static_cast<int>(a.dim(0) * a.dim(1));
    if (s.heads != 0 && s.heads != h) throw ShapeError("attention_stack: head count differs across layers");
    s.heads = h;
    s.values.insert(s.values.end(), a.data().begin(), a.data().end());
  }
  return s;
}

namespace detail {

inline void check_stack(const AttentionStack& s, const char* op) {
  if (s.layers < 0 || s.heads < 0 || s.grid < 1) throw InvalidArgument(std::string(op) + ": bad stack geometry");
  const auto N = s.tokens();
  if (static_cast<std::int64_t>(s.values.size()) != static_cast<std::int64_t>(s.layers) * s.heads * N * N) {
    throw ShapeError(std::string(op) + ": " + std::to_string(s.values.size()) + " values do not match " +
                     std::to_string(s.layers) + " layers x " + std::to_string(s.heads) + " heads x " +
                     std::to_string(N) + "^2");
  }
}

}  // namespace detail

/// Per layer: mean over heads and queries of the attention-weighted pixel
/// distance between query and key token centers.
inline LayerCurve attention_distance(const AttentionStack& s) {
  detail::check_stack(s, "attention_distance");
  const std::int64_t N = s.tokens();
  std::vector<double> dist(static_cast<std::size_t>(N * N));
  for (std::int64_t q = 0; q < N; ++q) {
    for (std::int64_t k = 0; k < N; ++k) {
      const double dy = static_cast<double>(q / s.grid - k / s.grid);
      const double dx = static_cast<double>(q % s.grid - k % s.grid);
      dist[q * N + k] = std::sqrt(dx * dx + dy * dy) * s.pitch;
    }
  }
  LayerCurve curve;
  for (int l = 0; l < s.layers; ++l) {
    double total = 0.0;
    for (int h = 0; h < s.heads; ++h) {
      const float* a = s.map(l, h);
      for (std::int64_t i = 0; i < N * N; ++i) total += a[i] * dist[i];
    }
    curve.push_back(s.heads == 0 ? 0.0 : total / (static_cast<double>(s.heads) * N));
  }
  return curve;
}

/// Normalized mutual information between query and key of one N x N map,
/// with a uniform prior over queries: I(Q;K) / sqrt(H(Q) H(K)).
inline double attention_map_nmi(const float* a, std::int64_t N) {
  if (N < 2) return 0.0;
  std::vector<double> pk(static_cast<std::size_t>(N), 0.0);
  for (std::int64_t q = 0; q < N; ++q)
    for (std::int64_t k = 0; k < N; ++k) pk[k] += a[q * N + k] / static_cast<double>(N);
  double hk = 0.0;
  for (double p : pk) {
    if (p > 0.0) hk -= p * std::log(p);
  }
  const double hq = std::log(static_cast<double>(N));
  if (hk <= 0.0) return 0.0;
  double mi = 0.0;
  for (std::int64_t q = 0; q < N; ++q) {
    for (std::int64_t k = 0; k < N; ++k) {
      const double v = a[q * N + k];
      if (v > 0.0) mi += v / static_cast<double>(N) * std::log(v / pk[k]);
    }
  }
  return std::clamp(mi / std::sqrt(hq * hk), 0.0, 1.0);
}

/// Per layer: head-averaged attention NMI. Rows must sum to 1 within 1e-5.
inline LayerCurve attention_nmi(const AttentionStack& s, double row_tolerance = 1e-5) {
  detail::check_stack(s, "attention_nmi");
  const std::int64_t N = s.tokens();
  LayerCurve curve;
  for (int l = 0; l < s.layers; ++l) {
    double total = 0.0;
    for (int h = 0; h < s.heads; ++h) {
      const float* a = s.map(l, h);
      for (std::int64_t q = 0; q < N; ++q) {
        double row = 0.0;
        for (std::int64_t k = 0; k < N; ++k) {
          if (a[q * N + k] < 0.0f) throw InvalidArgument("attention_nmi: negative attention weight");
          row += a[q * N + k];
        }
        if (std::abs(row - 1.0) > row_tolerance) {
          throw InvalidArgument("attention_nmi: row " + std::to_string(q) + " of layer " + std::to_string(l) +
                                " sums to " + std::to_string(row));
        }
      }
      total += attention_map_nmi(a, N);
    }
    curve.push_back(s.heads == 0 ? 0.0 : total / s.heads);
  }
  return curve;
}

/// Mean of log(1 + |DFT|) over frequencies with normalized radius >= 0.75,
/// minus the DC value, for token maps [B, N, D] (averaged over B and D).
inline double high_frequency_log_amplitude(const Tensor& hidden) {
  if (hidden.rank() != 3) throw ShapeError("fourier: hidden states must be [B, N, D]");
  const std::int64_t B = hidden.dim(0), N = hidden.dim(1), D = hidden.dim(2);
  const auto g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(N))));
  if (g * g != N) throw ShapeError("fourier: token count " + std::to_string(N) + " is not a square");
  if (B == 0 || D == 0) throw ShapeError("fourier: empty hidden states");
  using cd = std::complex<double>;
  std::vector<cd> twiddle(static_cast<std::size_t>(g * g));
  for (std::int64_t u = 0; u < g; ++u)
    for (std::int64_t x = 0; x < g; ++x) twiddle[u * g + x] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(u * x) / g);
  std::vector<double> log_amp(static_cast<std::size_t>(N), 0.0);
  std::vector<cd> rows(static_cast<std::size_t>(N));
  const float* h = hidden.data().data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t d = 0; d < D; ++d) {
      // DFT along x, then along y.
      for (std::int64_t y = 0; y < g; ++y) {
        for (std::int64_t u = 0; u < g; ++u) {
          cd acc = 0.0;
          for (std::int64_t x = 0; x < g; ++x) acc += static_cast<double>(h[(b * N + y * g + x) * D + d]) * twiddle[u * g + x];
          rows[y * g + u] = acc;
        }
      }
      for (std::int64_t v = 0; v < g; ++v) {
        for (std::int64_t u = 0; u < g; ++u) {
          cd acc = 0.0;
          for (std::int64_t y = 0; y < g; ++y) acc += rows[y * g + u] * twiddle[v * g + y];
          log_amp[v * g + u] += std::log1p(std::abs(acc));
        }
      }
    }
  }
  for (auto& v : log_amp) v /= static_cast<double>(B * D);
  auto centered = [g](std::int64_t i) { return static_cast<double>(i <= g / 2 ? i : i - g); };
  double rmax = 0.0;
  std::vector<double> radius(static_cast<std::size_t>(N));
  for (std::int64_t v = 0; v < g; ++v) {
    for (std::int64_t u = 0; u < g; ++u) {
      radius[v * g + u] = std::hypot(centered(u), centered(v));
      rmax = std::max(rmax, radius[v * g + u]);
    }
  }
  if (rmax == 0.0) return 0.0;
  double band = 0.0;
  int count = 0;
  for (std::int64_t i = 0; i < N; ++i) {
    if (radius[i] / rmax >= 0.75) {
      band += log_amp[i];
      ++count;
    }
  }
  return band / count - log_amp[0];
}

/// Per layer high-frequency statistic minus that of layer 0.
inline LayerCurve fourier_rel_log_amp(const std::vector<Tensor>& hidden) {
  LayerCurve curve;
  if (hidden.empty()) return curve;
  const double base = high_frequency_log_amplitude(hidden.front());
  curve.push_back(0.0);
  for (std::size_t l = 1; l < hidden.size(); ++l) curve.push_back(high_frequency_log_amplitude(hidden[l]) - base);
  return curve;
}

// ---------------------------------------------------------------------------
// Reconstruction quality

inline void check_same(const RasterImage& a, const RasterImage& b, const char* op) {
  if (!a.same_geometry(b)) throw ShapeError(std::string(op) + ": raster shapes differ");
  if (a.data.empty()) throw ShapeError(std::string(op) + ": empty raster");
}

inline double psnr_from_mse(double mse, double peak = 1.0) {
  if (mse < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

inline double psnr(const RasterImage& a, const RasterImage& b, double peak = 1.0) {
  check_same(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  return psnr_from_mse(se / static_cast<double>(a.data.size()), peak);
}

/// Mean SSIM over all 8x8 windows (stride 1, Gaussian weights sigma 1.5) and
/// channels.
inline double ssim(const RasterImage& a, const RasterImage& b, double peak = 1.0) {
  check_same(a, b, "ssim");
  constexpr int kWin = 8;
  if (a.height < kWin || a.width < kWin) throw ShapeError("ssim: image smaller than the 8x8 window");
  double w[kWin][kWin];
  double wsum = 0.0;
  for (int y = 0; y < kWin; ++y) {
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - 3.5, dx = x - 3.5;
      w[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += w[y][x];
    }
  }
  for (auto& row : w)
    for (auto& v : row) v /= wsum;
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;
  std::int64_t windows = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y0 = 0; y0 + kWin <= a.height; ++y0) {
      for (int x0 = 0; x0 + kWin <= a.width; ++x0) {
        double ma = 0, mb = 0;
        for (int y = 0; y < kWin; ++y)
          for (int x = 0; x < kWin; ++x) {
            ma += w[y][x] * a.at(c, y0 + y, x0 + x);
            mb += w[y][x] * b.at(c, y0 + y, x0 + x);
          }
        double va = 0, vb = 0, cov = 0;
        for (int y = 0; y < kWin; ++y)
          for (int x = 0; x < kWin; ++x) {
            const double da = a.at(c, y0 + y, x0 + x) - ma;
            const double db = b.at(c, y0 + y, x0 + x) - mb;
            va += w[y][x] * da * da;
            vb += w[y][x] * db * db;
            cov += w[y][x] * da * db;
          }
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  std::int64_t count = 0;
  std::vector<double> coords;      // [count][2]
  std::vector<double> components;  // [2][D]
  double variance[2] = {0.0, 0.0};
  double total_variance = 0.0;
  bool degenerate = false;

  double explained_ratio(int i) const { return total_variance > 0.0 ? variance[i] / total_variance : 0.0; }
};

/// Projects centered rows of `tokens` ([N, D], row-major) onto the two
/// leading covariance eigenvectors, found by power iteration with deflation.
/// Each eigenvector is signed so its largest-magnitude entry is positive.
inline PcaResult pca_project(const std::vector<double>& tokens, std::int64_t N, std::int64_t D,
                             int max_iterations = 1000, double tolerance = 1e-8) {
  if (N < 2) throw InvalidArgument("pca_project: need at least two tokens");
  if (D < 1 || static_cast<std::int64_t>(tokens.size()) != N * D) throw ShapeError("pca_project: token matrix size");
  PcaResult r;
  r.count = N;
  r.coords.assign(static_cast<std::size_t>(N * 2), 0.0);
  r.components.assign(static_cast<std::size_t>(2 * D), 0.0);
  std::vector<double> mean(static_cast<std::size_t>(D), 0.0);
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t d = 0; d < D; ++d) mean[d] += tokens[i * D + d] / static_cast<double>(N);
  std::vector<double> cov(static_cast<std::size_t>(D * D), 0.0);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t a = 0; a < D; ++a) {
      const double xa = tokens[i * D + a] - mean[a];
      for (std::int64_t b = a; b < D; ++b) cov[a * D + b] += xa * (tokens[i * D + b] - mean[b]);
    }
  }
  for (std::int64_t a = 0; a < D; ++a) {
    for (std::int64_t b = a; b < D; ++b) {
      cov[a * D + b] /= static_cast<double>(N - 1);
      cov[b * D + a] = cov[a * D + b];
    }
    r.total_variance += cov[a * D + a];
  }
  if (!(r.total_variance > 1e-24)) {
    r.degenerate = true;
    return r;
  }
  auto matvec = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::int64_t a = 0; a < D; ++a) {
      double s = 0.0;
      for (std::int64_t b = 0; b < D; ++b) s += cov[a * D + b] * v[b];
      out[a] = s;
    }
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  Rng rng(0x9ca);
  const int comps = static_cast<int>(std::min<std::int64_t>(2, D));
  for (int c = 0; c < comps; ++c) {
    std::vector<double> v(static_cast<std::size_t>(D));
    for (auto& x : v) x = rng.normal();
    std::vector<double> av(static_cast<std::size_t>(D));
    auto orthogonalize = [&](std::vector<double>& x) {
      for (int p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::int64_t d = 0; d < D; ++d) dot += x[d] * r.components[p * D + d];
        for (std::int64_t d = 0; d < D; ++d) x[d] -= dot * r.components[p * D + d];
      }
    };
    orthogonalize(v);
    double lambda = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
      const double n = norm(v);
      if (n == 0.0) break;
      for (auto& x : v) x /= n;
      matvec(v, av);
      // Deflation: remove the found components' contribution.
      for (int p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::int64_t d = 0; d < D; ++d) dot += v[d] * r.components[p * D + d];
        for (std::int64_t d = 0; d < D; ++d) av[d] -= r.variance[p] * dot * r.components[p * D + d];
      }
      orthogonalize(av);
      lambda = 0.0;
      for (std::int64_t d = 0; d < D; ++d) lambda += v[d] * av[d];
      double residual = 0.0;
      for (std::int64_t d = 0; d < D; ++d) residual += (av[d] - lambda * v[d]) * (av[d] - lambda * v[d]);
      v = av;
      if (std::sqrt(residual) <= tolerance * std::max(1.0, std::abs(lambda))) break;
    }
    const double n = norm(v);
    if (n > 0.0 && lambda > 1e-15 * r.total_variance) {
      for (auto& x : v) x /= n;
      const auto big = std::max_element(v.begin(), v.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
      if (*big < 0.0)
        for (auto& x : v) x = -x;
      matvec(v, av);
      lambda = 0.0;
      for (std::int64_t d = 0; d < D; ++d) lambda += v[d] * av[d];
      std::copy(v.begin(), v.end(), r.components.begin() + c * D);
      r.variance[c] = std::max(0.0, lambda);
    }
  }
  for (std::int64_t i = 0; i < N; ++i) {
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::int64_t d = 0; d < D; ++d) s += (tokens[i * D + d] - mean[d]) * r.components[c * D + d];
      r.coords[i * 2 + c] = s;
    }
  }
  return r;
}

}  // namespace kamim
