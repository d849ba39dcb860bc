#pragma once

// Masked reconstruction losses over image batches [B, C, H, W]. The token
// mask is row-major over the (H/p) x (W/p) token grid of each image; a pixel
// counts when its token is masked.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

namespace detail {

template <typename T>
BasicTensor<T> masked_l1(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                         const std::vector<std::uint8_t>& token_mask, int token_patch,
                         const BasicTensor<T>* weights, const char* name) {
  if (pred.rank() != 4) throw ShapeError(std::string(name) + ": expected [B, C, H, W], got " + shape_str(pred.shape()));
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(name) + ": prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const std::int64_t B = pred.dim(0), C = pred.dim(1), H = pred.dim(2), W = pred.dim(3);
  if (token_patch < 1 || H % token_patch != 0 || W % token_patch != 0) {
    throw InvalidArgument(std::string(name) + ": token patch does not divide the image");
  }
  const std::int64_t gw = W / token_patch;
  const std::int64_t N = (H / token_patch) * gw;
  if (static_cast<std::int64_t>(token_mask.size()) != B * N) {
    throw ShapeError(std::string(name) + ": token mask has " + std::to_string(token_mask.size()) +
                     " entries, expected " + std::to_string(B * N));
  }
  if (weights != nullptr && weights->numel() != B * H * W) {
    throw ShapeError(std::string(name) + ": weight raster has " + std::to_string(weights->numel()) +
                     " values, expected " + std::to_string(B * H * W));
  }
  // Per-pixel weight, 0 for unmasked pixels.
  auto pix = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * H * W), T(0));
  std::int64_t masked = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        if (!token_mask[b * N + (y / token_patch) * gw + x / token_patch]) continue;
        const std::int64_t i = (b * H + y) * W + x;
        (*pix)[i] = weights != nullptr ? weights->data()[i] : T(1);
        ++masked;
      }
    }
  }
  if (masked == 0) throw InvalidArgument(std::string(name) + ": no masked patches");
  const double count = static_cast<double>(masked * C);
  const T* p = pred.data().data();
  const T* t = target.data().data();
  const std::int64_t plane = H * W;
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (b * C + c) * plane;
      const T* w = pix->data() + b * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        if (w[i] != T(0)) total += static_cast<double>(w[i]) * std::abs(static_cast<double>(p[base + i]) - t[base + i]);
      }
    }
  }
  auto result = make_result<T>({}, {static_cast<T>(total / count)}, name, {&pred});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* pp = pred.node();
    auto pt = target.node_ptr();  // target is not a graph input; keep it alive
    o->backward = [o, pp, pt, pix, B, C, plane, count]() {
      if (!pp->requires_grad) return;
      const double g = static_cast<double>(o->grad[0]) / count;
      T* gp = pp->grad_buffer();
      const T* pv = pp->data.data();
      const T* tv = pt->data.data();
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t base = (b * C + c) * plane;
          const T* w = pix->data() + b * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const T d = pv[base + i] - tv[base + i];
            if (w[i] == T(0) || d == T(0)) continue;
            gp[base + i] += static_cast<T>(g * w[i] * (d > T(0) ? 1.0 : -1.0));
          }
        }
      }
    };
  }
  return result;
}

}  // namespace detail

/// Mean |pred - target| over masked pixels and all channels. Gradients flow
/// to pred only.
template <typename T>
BasicTensor<T> loss_simmim(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                           const std::vector<std::uint8_t>& token_mask, int token_patch) {
  return detail::masked_l1<T>(pred, target, token_mask, token_patch, nullptr, "loss_simmim");
}

/// Mean of w * |pred - target| over masked pixels and all channels, with w a
/// per-pixel weight ([B, H, W] or [B, 1, H, W]) shared by the channels.
template <typename T>
BasicTensor<T> loss_kamim(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                          const std::vector<std::uint8_t>& token_mask, const BasicTensor<T>& pixel_weights,
                          int token_patch) {
  return detail::masked_l1<T>(pred, target, token_mask, token_patch, &pixel_weights, "loss_kamim");
}

}  // namespace kamim
