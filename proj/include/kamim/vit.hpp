#pragma once

// Pre-norm vision transformer encoder with a learnable mask token, learnable
// positional embeddings and a per-token linear pixel head. No class token:
// pooled features are token means.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kamim/checkpoint.hpp"
#include "kamim/error.hpp"
#include "kamim/image.hpp"
#include "kamim/masking.hpp"
#include "kamim/rng.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

struct ViTConfig {
  int img_size = 32;
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int channels = 3;

  int grid() const { return img_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (img_size < 1 || patch_size < 1 || img_size % patch_size != 0) {
      throw InvalidArgument("ViTConfig: img_size must be a positive multiple of patch_size");
    }
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
      throw InvalidArgument("ViTConfig: embed_dim must be a positive multiple of heads");
    }
    if (depth < 0 || mlp_ratio < 1 || channels < 1) throw InvalidArgument("ViTConfig: bad depth/mlp_ratio/channels");
  }

  bool operator==(const ViTConfig&) const = default;

  std::string to_text() const {
    std::ostringstream os;
    os << "img_size=" << img_size << "\npatch_size=" << patch_size << "\nembed_dim=" << embed_dim
       << "\ndepth=" << depth << "\nheads=" << heads << "\nmlp_ratio=" << mlp_ratio
       << "\nchannels=" << channels << "\n";
    return os.str();
  }

  static ViTConfig from_text(const std::string& text) {
    ViTConfig cfg;
    std::map<std::string, int*> fields{{"img_size", &cfg.img_size},   {"patch_size", &cfg.patch_size},
                                       {"embed_dim", &cfg.embed_dim}, {"depth", &cfg.depth},
                                       {"heads", &cfg.heads},         {"mlp_ratio", &cfg.mlp_ratio},
                                       {"channels", &cfg.channels}};
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("model config: malformed line '" + line + "'");
      const auto it = fields.find(line.substr(0, eq));
      if (it == fields.end()) throw FormatError("model config: unknown key '" + line.substr(0, eq) + "'");
      try {
        *it->second = std::stoi(line.substr(eq + 1));
      } catch (const std::exception&) {
        throw FormatError("model config: bad value in '" + line + "'");
      }
    }
    cfg.validate();
    return cfg;
  }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Norm {
  Tensor gain;
  Tensor bias;
};

struct Block {
  Norm norm1;
  Linear qkv;
  Linear proj;
  Norm norm2;
  Linear fc1;
  Linear fc2;
};

struct ForwardOptions {
  bool capture_attention = true;
  // Block inputs and post-attention residual streams.
  bool capture_tokens = false;
  // Run blocks [0, stop_after) only and skip the head; -1 runs everything.
  int stop_after = -1;
};

struct EncoderOutput {
  std::vector<Tensor> hidden;          // depth + 1 entries, [B, N, D]
  std::vector<Tensor> attention;       // per layer, [B, heads, N, N], post-softmax
  std::vector<Tensor> pre_attention;   // per layer, [B, N, D]
  std::vector<Tensor> post_attention;  // per layer, [B, N, D]
  Tensor reconstruction;               // [B, C, H, W]
};

inline Tensor linear(const Tensor& x, const Linear& layer) {
  return add(matmul(x, layer.weight), layer.bias);
}

/// Closed-form parameter count of the architecture.
inline std::int64_t vit_parameter_count(const ViTConfig& c) {
  const std::int64_t D = c.embed_dim;
  const std::int64_t P = c.patch_dim();
  const std::int64_t H = static_cast<std::int64_t>(c.mlp_ratio) * D;
  const std::int64_t per_block = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D + (D * H + H) + (H * D + D);
  return (P * D + D) + D + static_cast<std::int64_t>(c.tokens()) * D + c.depth * per_block + 2 * D + (D * P + P);
}

class VisionTransformer {
 public:
  explicit VisionTransformer(const ViTConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::int64_t D = cfg_.embed_dim;
    const std::int64_t P = cfg_.patch_dim();
    const std::int64_t H = static_cast<std::int64_t>(cfg_.mlp_ratio) * D;
    auto lin = [&](std::int64_t in, std::int64_t out) { return Linear{trunc_normal({in, out}, rng), zeros({out})}; };
    auto norm = [&]() { return Norm{Tensor::ones({D}, true), zeros({D})}; };
    patch_embed_ = lin(P, D);
    mask_token_ = trunc_normal({D}, rng);
    pos_embed_ = trunc_normal({cfg_.tokens(), D}, rng);
    for (int l = 0; l < cfg_.depth; ++l) {
      Block b;
      b.norm1 = norm();
      b.qkv = lin(D, 3 * D);
      b.proj = lin(D, D);
      b.norm2 = norm();
      b.fc1 = lin(D, H);
      b.fc2 = lin(H, D);
      blocks_.push_back(std::move(b));
    }
    norm_ = norm();
    head_ = lin(D, P);
  }

  const ViTConfig& config() const { return cfg_; }

  /// Parameters in a fixed order with stable dotted names.
  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"patch_embed.weight", &patch_embed_.weight}, {"patch_embed.bias", &patch_embed_.bias},
        {"mask_token", &mask_token_},                 {"pos_embed", &pos_embed_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      Block& b = blocks_[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      out.insert(out.end(), {{p + "norm1.gain", &b.norm1.gain}, {p + "norm1.bias", &b.norm1.bias},
                             {p + "attn.qkv.weight", &b.qkv.weight}, {p + "attn.qkv.bias", &b.qkv.bias},
                             {p + "attn.proj.weight", &b.proj.weight}, {p + "attn.proj.bias", &b.proj.bias},
                             {p + "norm2.gain", &b.norm2.gain}, {p + "norm2.bias", &b.norm2.bias},
                             {p + "mlp.fc1.weight", &b.fc1.weight}, {p + "mlp.fc1.bias", &b.fc1.bias},
                             {p + "mlp.fc2.weight", &b.fc2.weight}, {p + "mlp.fc2.bias", &b.fc2.bias}});
    }
    out.insert(out.end(), {{"norm.gain", &norm_.gain}, {"norm.bias", &norm_.bias},
                           {"head.weight", &head_.weight}, {"head.bias", &head_.bias}});
    return out;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* t : parameters()) n += t->numel();
    return n;
  }

  std::vector<NamedArray> to_arrays() {
    std::vector<NamedArray> out;
    for (auto& [name, t] : named_parameters()) out.push_back({name, t->shape(), t->values()});
    return out;
  }

  void load_arrays(const std::vector<NamedArray>& arrays) {
    auto params = named_parameters();
    if (arrays.size() != params.size()) {
      throw FormatError("checkpoint has " + std::to_string(arrays.size()) + " parameters, model expects " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (arrays[i].name != params[i].first || arrays[i].shape != params[i].second->shape()) {
        throw FormatError("checkpoint parameter '" + arrays[i].name + "' " + shape_str(arrays[i].shape) +
                          " does not match model parameter '" + params[i].first + "' " +
                          shape_str(params[i].second->shape()));
      }
      auto dst = params[i].second->mutable_data();
      std::copy(arrays[i].values.begin(), arrays[i].values.end(), dst.begin());
    }
  }

  /// Deep copy with fresh parameter storage.
  VisionTransformer clone() {
    VisionTransformer copy(cfg_, 0);
    copy.load_arrays(to_arrays());
    return copy;
  }

  void set_requires_grad(bool on) {
    for (auto* t : parameters()) t->set_requires_grad(on);
  }

  void zero_grad() {
    for (auto* t : parameters()) t->zero_grad();
  }

  Tensor& mask_token() { return mask_token_; }
  Tensor& pos_embed() { return pos_embed_; }
  Linear& patch_embedding() { return patch_embed_; }
  Linear& head() { return head_; }
  std::vector<Block>& blocks() { return blocks_; }

  /// images [B, C, H, W] -> flattened patches [B, N, C*p*p], patch vector
  /// ordered (channel, row, column).
  Tensor patchify(const Tensor& images) const {
    check_images(images);
    const std::int64_t B = images.dim(0);
    const std::int64_t C = cfg_.channels;
    const std::int64_t g = cfg_.grid();
    const std::int64_t p = cfg_.patch_size;
    auto x = reshape(images, {B, C, g, p, g, p});
    x = permute(x, {0, 2, 4, 1, 3, 5});
    return reshape(x, {B, g * g, C * p * p});
  }

  /// Inverse of patchify.
  Tensor unpatchify(const Tensor& patches) const {
    const std::int64_t B = patches.dim(0);
    const std::int64_t C = cfg_.channels;
    const std::int64_t g = cfg_.grid();
    const std::int64_t p = cfg_.patch_size;
    auto x = reshape(patches, {B, g, g, C, p, p});
    x = permute(x, {0, 3, 1, 4, 2, 5});
    return reshape(x, {B, C, g * p, g * p});
  }

  /// Linear projection of patches, before mask substitution and positions.
  Tensor patch_embed(const Tensor& images) const { return linear(patchify(images), patch_embed_); }

  /// token_mask covers B*N tokens (row-major per image); empty = no masking.
  EncoderOutput forward(const Tensor& images, const std::vector<std::uint8_t>& token_mask = {},
                        const ForwardOptions& opts = {}) const {
    const std::int64_t B = images.dim(0);
    const std::int64_t N = cfg_.tokens();
    const std::int64_t D = cfg_.embed_dim;
    if (!token_mask.empty() && static_cast<std::int64_t>(token_mask.size()) != B * N) {
      throw ShapeError("forward: token mask has " + std::to_string(token_mask.size()) + " entries, expected " +
                       std::to_string(B * N));
    }
    EncoderOutput out;
    Tensor x = patch_embed(images);
    if (!token_mask.empty()) x = apply_mask(x, token_mask, mask_token_);
    x = add(x, pos_embed_);
    out.hidden.push_back(x);

    const int depth = opts.stop_after < 0 ? cfg_.depth : std::min(opts.stop_after, cfg_.depth);
    const std::int64_t heads = cfg_.heads;
    const std::int64_t dh = D / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < depth; ++l) {
      const Block& b = blocks_[static_cast<std::size_t>(l)];
      if (opts.capture_tokens) out.pre_attention.push_back(x);
      Tensor h = layer_norm(x, b.norm1.gain, b.norm1.bias);
      Tensor qkv = linear(h, b.qkv);
      qkv = permute(reshape(qkv, {B, N, 3, heads, dh}), {2, 0, 3, 1, 4});
      Tensor q = reshape(slice(qkv, 0, 0, 1), {B, heads, N, dh});
      Tensor k = reshape(slice(qkv, 0, 1, 2), {B, heads, N, dh});
      Tensor v = reshape(slice(qkv, 0, 2, 3), {B, heads, N, dh});
      Tensor attn = softmax(scale(matmul(q, transpose(k)), scale_factor), -1);
      if (opts.capture_attention) out.attention.push_back(attn);
      Tensor ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, N, D});
      x = add(x, linear(ctx, b.proj));
      if (opts.capture_tokens) out.post_attention.push_back(x);
      h = layer_norm(x, b.norm2.gain, b.norm2.bias);
      h = linear(gelu(linear(h, b.fc1)), b.fc2);
      x = add(x, h);
      out.hidden.push_back(x);
    }
    if (opts.stop_after < 0) {
      Tensor y = linear(layer_norm(x, norm_.gain, norm_.bias), head_);
      out.reconstruction = unpatchify(y);
    }
    return out;
  }

  /// Token-mean of hidden state `layer_index` (0 = embeddings), optionally
  /// layer-normalized (no affine) per token first. Returns [B, D].
  Tensor forward_features(const Tensor& images, int layer_index, bool use_layernorm = false) const {
    if (layer_index < 0 || layer_index > cfg_.depth) {
      throw InvalidArgument("forward_features: layer index " + std::to_string(layer_index) + " outside [0, " +
                            std::to_string(cfg_.depth) + "]");
    }
    ForwardOptions opts;
    opts.capture_attention = false;
    opts.stop_after = layer_index;
    auto out = forward(images, {}, opts);
    Tensor h = out.hidden[static_cast<std::size_t>(layer_index)];
    if (use_layernorm) h = layer_norm(h);
    return mean(h, {1});
  }

  void save(const std::string& path) {
    save_checkpoint(to_arrays(), path);
    std::ofstream cfg_out(path + ".cfg");
    if (!cfg_out) throw FormatError("cannot write model config '" + path + ".cfg'");
    cfg_out << cfg_.to_text();
  }

  static VisionTransformer load(const std::string& path) {
    std::ifstream in(path + ".cfg");
    if (!in) throw FormatError("cannot read model config '" + path + ".cfg'");
    std::stringstream ss;
    ss << in.rdbuf();
    VisionTransformer model(ViTConfig::from_text(ss.str()), 0);
    model.load_arrays(load_checkpoint(path));
    return model;
  }

 private:
  static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

  static Tensor trunc_normal(Shape shape, Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.truncated_normal(0.02));
    return Tensor::from_data(std::move(shape), std::move(v), true);
  }

  void check_images(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != cfg_.img_size ||
        images.dim(3) != cfg_.img_size) {
      throw ShapeError("ViT: expected images [B," + std::to_string(cfg_.channels) + "," +
                       std::to_string(cfg_.img_size) + "," + std::to_string(cfg_.img_size) + "], got " +
                       shape_str(images.shape()));
    }
  }

  ViTConfig cfg_;
  Linear patch_embed_;
  Tensor mask_token_;
  Tensor pos_embed_;
  std::vector<Block> blocks_;
  Norm norm_;
  Linear head_;
};

/// Stacks rasters into an images tensor [B, C, H, W].
inline Tensor batch_images(const std::vector<RasterImage>& images) {
  if (images.empty()) throw InvalidArgument("batch_images: empty batch");
  const auto& first = images.front();
  std::vector<float> data;
  data.reserve(images.size() * first.data.size());
  for (const auto& img : images) {
    if (!img.same_geometry(first)) throw ShapeError("batch_images: mixed geometry");
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), first.channels, first.height, first.width},
                           std::move(data));
}

/// Image b of a [B, C, H, W] tensor as a raster.
inline RasterImage unbatch_image(const Tensor& images, std::int64_t b) {
  RasterImage img(static_cast<int>(images.dim(2)), static_cast<int>(images.dim(3)), static_cast<int>(images.dim(1)));
  const auto n = static_cast<std::int64_t>(img.data.size());
  std::copy_n(images.data().data() + b * n, n, img.data.begin());
  return img;
}

}  // namespace kamim
