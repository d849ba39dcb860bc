#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/fast.hpp"
#include "kamim/image.hpp"
#include "kamim/losses.hpp"
#include "kamim/masking.hpp"
#include "kamim/optim.hpp"
#include "kamim/parallel.hpp"
#include "kamim/rng.hpp"
#include "kamim/tensor.hpp"
#include "kamim/vit.hpp"
#include "kamim/weighting.hpp"

namespace kamim {

/// Per-channel normalization applied to model inputs and targets.
struct Normalization {
  std::vector<float> mean{0.5f, 0.5f, 0.5f};
  std::vector<float> std{0.5f, 0.5f, 0.5f};

  std::vector<float> mean_for(int channels) const { return expand(mean, channels, "mean"); }
  std::vector<float> std_for(int channels) const { return expand(std, channels, "std"); }

 private:
  static std::vector<float> expand(const std::vector<float>& v, int channels, const char* what) {
    if (v.size() == 1) return std::vector<float>(static_cast<std::size_t>(channels), v[0]);
    if (static_cast<int>(v.size()) != channels) {
      throw InvalidArgument(std::string("Normalization: ") + what + " has " + std::to_string(v.size()) +
                            " entries for " + std::to_string(channels) + " channels");
    }
    return v;
  }
};

struct PretrainConfig {
  ViTConfig model;
  MaskConfig mask;
  // Unset trains the plain SimMIM objective.
  std::optional<WeightConfig> weight;
  int fast_threshold = fast::kDefaultThreshold;
  OptimConfig optim;
  Normalization norm;
  bool flips = true;
  // false: each sample keeps one mask for the whole run.
  bool resample_masks = true;
};

struct StepInfo {
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainReport {
  std::vector<double> losses;
  std::vector<double> lrs;
  std::vector<double> epoch_seconds;
};

struct PretrainResult {
  VisionTransformer model;
  TrainReport report;
};

using StepCallback = std::function<void(const StepInfo&)>;

namespace detail {

inline void check_geometry(const PackedDataset& data, const ViTConfig& cfg) {
  data.validate();
  if (static_cast<int>(data.height) != cfg.img_size || static_cast<int>(data.width) != cfg.img_size ||
      static_cast<int>(data.channels) != cfg.channels) {
    throw InvalidArgument("dataset geometry " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                          "x" + std::to_string(data.channels) + " does not match model input " +
                          std::to_string(cfg.img_size) + "x" + std::to_string(cfg.img_size) + "x" +
                          std::to_string(cfg.channels));
  }
}

inline std::int64_t steps_per_epoch(std::size_t count, int batch_size) {
  return static_cast<std::int64_t>((count + batch_size - 1) / batch_size);
}

inline std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(epoch), ~0ULL);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

// One augmented, normalized training view plus its token mask and (KAMIM)
// per-pixel weights.
struct PreparedSample {
  RasterImage view;
  std::vector<std::uint8_t> token_mask;
  std::vector<float> weights;
};

inline PreparedSample prepare_sample(const PackedDataset& data, std::size_t index, const PretrainConfig& cfg,
                                     int epoch) {
  PreparedSample s;
  Rng rng = Rng::derive(cfg.optim.seed, static_cast<std::uint64_t>(epoch) + 1, index);
  RasterImage img = data.image(index);
  if (cfg.flips) {
    if (rng.bernoulli(0.5)) img = flip_horizontal(img);
    if (rng.bernoulli(0.5)) img = flip_vertical(img);
  }
  if (cfg.weight) {
    const WeightMap w = keypoint_weights(to_grayscale(img), *cfg.weight, cfg.fast_threshold);
    s.weights = pixel_weights(w, cfg.weight->patch_size, img.height, img.width).data;
  }
  s.view = normalize(img, cfg.norm.mean_for(img.channels), cfg.norm.std_for(img.channels));
  Rng mask_rng = cfg.resample_masks ? Rng::derive(cfg.mask.seed ^ cfg.optim.seed, static_cast<std::uint64_t>(epoch) + 1, index)
                                    : Rng::derive(cfg.mask.seed ^ cfg.optim.seed, 0, index);
  const PatchMask mask = generate_mask(cfg.model.img_size, cfg.mask, mask_rng);
  s.token_mask = expand_to_tokens(mask, cfg.mask.mask_patch_size, cfg.model.patch_size);
  return s;
}

}  // namespace detail

/// Masked-image-model pretraining. With cfg.weight set the loss is the
/// keypoint-weighted one; otherwise plain masked L1.
inline PretrainResult pretrain(const PackedDataset& data, const PretrainConfig& cfg,
                               const StepCallback& on_step = {}) {
  cfg.model.validate();
  cfg.mask.validate(cfg.model.img_size);
  if (cfg.mask.mask_patch_size % cfg.model.patch_size != 0) {
    throw InvalidArgument("pretrain: mask patch " + std::to_string(cfg.mask.mask_patch_size) +
                          " is not a multiple of the token patch " + std::to_string(cfg.model.patch_size));
  }
  if (cfg.weight) {
    cfg.weight->validate();
    if (cfg.model.img_size % cfg.weight->patch_size != 0) {
      throw InvalidArgument("pretrain: weight patch does not divide the image side");
    }
  }
  cfg.optim.validate();
  detail::check_geometry(data, cfg.model);
  if (data.count == 0) throw InvalidArgument("pretrain: empty dataset");

  VisionTransformer model(cfg.model, cfg.optim.seed);
  AdamW opt(model.named_parameters(), cfg.optim);
  const std::int64_t per_epoch = detail::steps_per_epoch(data.count, cfg.optim.batch_size);
  const std::int64_t total = per_epoch * cfg.optim.epochs;
  const std::int64_t warmup = per_epoch * cfg.optim.warmup_epochs;
  TrainReport report;
  std::int64_t step = 0;
  const int C = cfg.model.channels;
  const int S = cfg.model.img_size;

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = detail::epoch_order(data.count, cfg.optim.seed, epoch);
    for (std::int64_t b0 = 0; b0 < static_cast<std::int64_t>(order.size()); b0 += cfg.optim.batch_size) {
      const std::int64_t bn = std::min<std::int64_t>(cfg.optim.batch_size, static_cast<std::int64_t>(order.size()) - b0);
      std::vector<detail::PreparedSample> samples(static_cast<std::size_t>(bn));
      parallel_for(0, bn, [&](std::int64_t i) {
        samples[i] = detail::prepare_sample(data, order[b0 + i], cfg, epoch);
      }, 2);
      const std::size_t img_n = static_cast<std::size_t>(C) * S * S;
      std::vector<float> pixels;
      std::vector<std::uint8_t> token_mask;
      std::vector<float> weights;
      pixels.reserve(bn * img_n);
      for (auto& s : samples) {
        pixels.insert(pixels.end(), s.view.data.begin(), s.view.data.end());
        token_mask.insert(token_mask.end(), s.token_mask.begin(), s.token_mask.end());
        weights.insert(weights.end(), s.weights.begin(), s.weights.end());
      }
      const Tensor images = Tensor::from_data({bn, C, S, S}, std::move(pixels));

      const double lr = lr_at(step, total, warmup, cfg.optim.lr);
      ForwardOptions fo;
      fo.capture_attention = false;
      const auto out = model.forward(images, token_mask, fo);
      Tensor loss;
      if (cfg.weight) {
        const Tensor w = Tensor::from_data({bn, 1, S, S}, std::move(weights));
        loss = loss_kamim(out.reconstruction, images, token_mask, w, cfg.model.patch_size);
      } else {
        loss = loss_simmim(out.reconstruction, images, token_mask, cfg.model.patch_size);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
      report.losses.push_back(value);
      report.lrs.push_back(lr);
      if (on_step) on_step({step, total, epoch, lr, value});
      ++step;
    }
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Linear probing and finetuning

struct ProbeConfig {
  // Hidden state index fed to the head (0 = embeddings, depth = last block).
  int layer = 3;
  bool use_layernorm = false;
  OptimConfig optim{5e-3, 0.05, 0.9, 0.999, 1e-8, 50, 5, 64, 0};
  Normalization norm;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> losses;
};

namespace detail {

inline std::vector<std::int64_t> labels_of(const PackedDataset& data, std::uint32_t classes, const char* what) {
  std::vector<std::int64_t> out;
  out.reserve(data.count);
  for (auto l : data.labels) {
    if (l >= classes) {
      throw InvalidArgument(std::string(what) + ": label " + std::to_string(l) + " outside the " +
                            std::to_string(classes) + " training classes");
    }
    out.push_back(l);
  }
  return out;
}

inline Tensor normalized_batch(const PackedDataset& data, std::span<const std::size_t> idx, const Normalization& norm) {
  const int C = static_cast<int>(data.channels);
  const auto mean = norm.mean_for(C);
  const auto sd = norm.std_for(C);
  std::vector<float> pixels;
  pixels.reserve(idx.size() * data.image_size());
  for (auto i : idx) {
    const auto img = normalize(data.image(i), mean, sd);
    pixels.insert(pixels.end(), img.data.begin(), img.data.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(idx.size()), C, static_cast<std::int64_t>(data.height),
                            static_cast<std::int64_t>(data.width)},
                           std::move(pixels));
}

struct Head {
  Linear layer;
  std::vector<std::pair<std::string, Tensor*>> named() { return {{"head.weight", &layer.weight}, {"head.bias", &layer.bias}}; }
};

inline Head make_head(std::int64_t in, std::int64_t classes, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xC1A55, 0);
  std::vector<float> w(static_cast<std::size_t>(in * classes));
  for (auto& v : w) v = static_cast<float>(rng.truncated_normal(0.02));
  return {Linear{Tensor::from_data({in, classes}, std::move(w), true), Tensor::zeros({classes}, true)}};
}

inline std::int64_t argmax_row(std::span<const float> row) {
  return std::max_element(row.begin(), row.end()) - row.begin();
}

inline double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (labels.empty()) return 0.0;
  const std::int64_t C = logits.dim(1);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += argmax_row(logits.data().subspan(i * C, C)) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace detail

/// Frozen-backbone features ([count, D]) of every image in the dataset.
inline Tensor extract_features(const VisionTransformer& model, const PackedDataset& data, int layer,
                               bool use_layernorm, const Normalization& norm = {}, int chunk = 256) {
  detail::check_geometry(data, model.config());
  NoGradGuard guard;
  const std::int64_t D = model.config().embed_dim;
  std::vector<float> feats;
  feats.reserve(static_cast<std::size_t>(data.count) * D);
  std::vector<std::size_t> idx;
  for (std::size_t b0 = 0; b0 < data.count; b0 += static_cast<std::size_t>(chunk)) {
    idx.clear();
    for (std::size_t i = b0; i < std::min<std::size_t>(data.count, b0 + chunk); ++i) idx.push_back(i);
    const Tensor f = model.forward_features(detail::normalized_batch(data, idx, norm), layer, use_layernorm);
    feats.insert(feats.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(data.count), D}, std::move(feats));
}

/// Trains a linear classifier on frozen, token-averaged features of hidden
/// state cfg.layer and reports top-1 accuracy on both splits.
inline ProbeResult linear_probe(const VisionTransformer& model, const PackedDataset& train, const PackedDataset& test,
                                const ProbeConfig& cfg) {
  cfg.optim.validate();
  if (train.count == 0) throw InvalidArgument("linear_probe: empty training set");
  const std::uint32_t classes = train.num_classes();
  const auto train_labels = detail::labels_of(train, classes, "linear_probe");
  const auto test_labels = detail::labels_of(test, classes, "linear_probe");
  const Tensor ftrain = extract_features(model, train, cfg.layer, cfg.use_layernorm, cfg.norm);
  const Tensor ftest = extract_features(model, test, cfg.layer, cfg.use_layernorm, cfg.norm);
  const std::int64_t D = ftrain.dim(1);

  auto head = detail::make_head(D, classes, cfg.optim.seed);
  AdamW opt(head.named(), cfg.optim);
  const std::int64_t per_epoch = detail::steps_per_epoch(train.count, cfg.optim.batch_size);
  const std::int64_t total = std::max<std::int64_t>(1, per_epoch * cfg.optim.epochs);
  const std::int64_t warmup = per_epoch * cfg.optim.warmup_epochs;
  ProbeResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const auto order = detail::epoch_order(train.count, cfg.optim.seed, epoch);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.optim.batch_size)) {
      const std::size_t bn = std::min<std::size_t>(cfg.optim.batch_size, order.size() - b0);
      std::vector<float> x;
      std::vector<std::int64_t> y;
      x.reserve(bn * D);
      for (std::size_t i = 0; i < bn; ++i) {
        const auto row = ftrain.data().subspan(order[b0 + i] * D, D);
        x.insert(x.end(), row.begin(), row.end());
        y.push_back(train_labels[order[b0 + i]]);
      }
      const Tensor xb = Tensor::from_data({static_cast<std::int64_t>(bn), D}, std::move(x));
      const Tensor loss = cross_entropy(linear(xb, head.layer), y);
      opt.zero_grad();
      loss.backward();
      opt.step(lr_at(step, total, warmup, cfg.optim.lr));
      result.losses.push_back(loss.item());
      ++step;
    }
  }
  NoGradGuard guard;
  result.train_accuracy = detail::accuracy(linear(ftrain, head.layer), train_labels);
  result.test_accuracy = detail::accuracy(linear(ftest, head.layer), test_labels);
  return result;
}

struct FinetuneConfig {
  int layer = -1;  // -1: last block
  bool use_layernorm = true;
  OptimConfig optim{5e-3, 0.05, 0.9, 0.999, 1e-8, 10, 1, 64, 0};
  Normalization norm;
  bool flips = false;
};

/// Trains backbone and linear head together; the model is updated in place.
inline ProbeResult finetune(VisionTransformer& model, const PackedDataset& train, const PackedDataset& test,
                            const FinetuneConfig& cfg) {
  cfg.optim.validate();
  if (train.count == 0) throw InvalidArgument("finetune: empty training set");
  detail::check_geometry(train, model.config());
  detail::check_geometry(test, model.config());
  const std::uint32_t classes = train.num_classes();
  const auto train_labels = detail::labels_of(train, classes, "finetune");
  const auto test_labels = detail::labels_of(test, classes, "finetune");
  const int layer = cfg.layer < 0 ? model.config().depth : cfg.layer;
  auto head = detail::make_head(model.config().embed_dim, classes, cfg.optim.seed);
  auto params = model.named_parameters();
  for (auto& p : head.named()) params.push_back(p);
  AdamW opt(params, cfg.optim);
  const std::int64_t per_epoch = detail::steps_per_epoch(train.count, cfg.optim.batch_size);
  const std::int64_t total = std::max<std::int64_t>(1, per_epoch * cfg.optim.epochs);
  const std::int64_t warmup = per_epoch * cfg.optim.warmup_epochs;
  ProbeResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const auto order = detail::epoch_order(train.count, cfg.optim.seed, epoch);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.optim.batch_size)) {
      const std::size_t bn = std::min<std::size_t>(cfg.optim.batch_size, order.size() - b0);
      std::vector<std::size_t> idx(order.begin() + b0, order.begin() + b0 + bn);
      std::vector<std::int64_t> y;
      for (auto i : idx) y.push_back(train_labels[i]);
      Tensor images = detail::normalized_batch(train, idx, cfg.norm);
      if (cfg.flips) {
        std::vector<RasterImage> views;
        for (std::size_t i = 0; i < bn; ++i) {
          RasterImage v = unbatch_image(images, static_cast<std::int64_t>(i));
          Rng rng = Rng::derive(cfg.optim.seed, static_cast<std::uint64_t>(epoch) + 1, idx[i]);
          if (rng.bernoulli(0.5)) v = flip_horizontal(v);
          if (rng.bernoulli(0.5)) v = flip_vertical(v);
          views.push_back(std::move(v));
        }
        images = batch_images(views);
      }
      const Tensor feats = model.forward_features(images, layer, cfg.use_layernorm);
      const Tensor loss = cross_entropy(linear(feats, head.layer), y);
      opt.zero_grad();
      loss.backward();
      opt.step(lr_at(step, total, warmup, cfg.optim.lr));
      result.losses.push_back(loss.item());
      ++step;
    }
  }
  NoGradGuard guard;
  auto eval = [&](const PackedDataset& data, const std::vector<std::int64_t>& labels) {
    const Tensor f = extract_features(model, data, layer, cfg.use_layernorm, cfg.norm);
    return detail::accuracy(linear(f, head.layer), labels);
  };
  result.train_accuracy = eval(train, train_labels);
  result.test_accuracy = eval(test, test_labels);
  return result;
}

}  // namespace kamim
