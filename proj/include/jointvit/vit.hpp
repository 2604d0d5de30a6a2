#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jointvit/autodiff.hpp"
#include "jointvit/dataset.hpp"
#include "jointvit/random.hpp"

namespace jointvit {

struct ViTConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::size_t channels = 1;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 3;
  double dropout = 0.0;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t mlp_hidden() const { return mlp_ratio * embed_dim; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (image_size == 0) out.emplace_back("image_size must be positive");
    if (patch_size == 0) out.emplace_back("patch_size must be positive");
    else if (image_size % patch_size != 0)
      out.emplace_back("image_size " + std::to_string(image_size) +
                       " is not divisible by patch_size " + std::to_string(patch_size));
    if (channels == 0) out.emplace_back("channels must be positive");
    if (embed_dim == 0) out.emplace_back("embed_dim must be positive");
    if (heads == 0) out.emplace_back("heads must be positive");
    else if (embed_dim % heads != 0)
      out.emplace_back("embed_dim " + std::to_string(embed_dim) +
                       " is not divisible by heads " + std::to_string(heads));
    if (depth == 0) out.emplace_back("depth must be positive");
    if (mlp_ratio == 0) out.emplace_back("mlp_ratio must be positive");
    if (num_classes < 2) out.emplace_back("num_classes must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) out.emplace_back("dropout must be in [0, 1)");
    return out;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid ViTConfig:";
    for (const auto& s : v) msg += " " + s + ";";
    fail(ErrorKind::Config, msg);
  }

  /// Closed-form number of learnable scalars. With P = patch_dim, k patches,
  /// d = embed_dim, h = mlp_hidden, C = num_classes:
  ///   (P+1)d + d + (k+1)d + depth*(4(d^2+d) + 4d + 2dh + h + d) + 2d + (d+1)C + d + 1
  std::size_t parameter_count() const {
    const std::size_t p = patch_dim(), d = embed_dim, h = mlp_hidden(), k = num_patches();
    const std::size_t block = 4 * (d * d + d) + 4 * d + 2 * d * h + h + d;
    return (p + 1) * d + d + (k + 1) * d + depth * block + 2 * d + (d + 1) * num_classes + d + 1;
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

struct LayerNormParams {
  Tensor weight;
  Tensor bias;
};

struct EncoderBlock {
  LayerNormParams norm1;
  Linear q, k, v, out;
  LayerNormParams norm2;
  Linear fc1, fc2;
};

struct ViTParams {
  ViTConfig config;
  Linear patch_embed;
  Tensor cls_token;  // d
  Tensor pos_embed;  // (k+1) x d
  std::vector<EncoderBlock> blocks;
  LayerNormParams norm;
  Linear head_class;  // d x C
  Linear head_value;  // d x 1

  /// Visits every tensor with its canonical name (e.g. block.0.attn.q.weight)
  /// in a fixed order; checkpoints and the optimizer rely on this order.
  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    f(std::string("patch_embed.weight"), self.patch_embed.weight);
    f(std::string("patch_embed.bias"), self.patch_embed.bias);
    f(std::string("cls_token"), self.cls_token);
    f(std::string("pos_embed"), self.pos_embed);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "block." + std::to_string(i) + ".";
      f(p + "norm1.weight", b.norm1.weight);
      f(p + "norm1.bias", b.norm1.bias);
      f(p + "attn.q.weight", b.q.weight);
      f(p + "attn.q.bias", b.q.bias);
      f(p + "attn.k.weight", b.k.weight);
      f(p + "attn.k.bias", b.k.bias);
      f(p + "attn.v.weight", b.v.weight);
      f(p + "attn.v.bias", b.v.bias);
      f(p + "attn.out.weight", b.out.weight);
      f(p + "attn.out.bias", b.out.bias);
      f(p + "norm2.weight", b.norm2.weight);
      f(p + "norm2.bias", b.norm2.bias);
      f(p + "mlp.fc1.weight", b.fc1.weight);
      f(p + "mlp.fc1.bias", b.fc1.bias);
      f(p + "mlp.fc2.weight", b.fc2.weight);
      f(p + "mlp.fc2.bias", b.fc2.bias);
    }
    f(std::string("norm.weight"), self.norm.weight);
    f(std::string("norm.bias"), self.norm.bias);
    f(std::string("head_class.weight"), self.head_class.weight);
    f(std::string("head_class.bias"), self.head_class.bias);
    f(std::string("head_value.weight"), self.head_value.weight);
    f(std::string("head_value.bias"), self.head_value.bias);
  }

  template <class F>
  void visit(F&& f) { visit_impl(*this, std::forward<F>(f)); }
  template <class F>
  void visit(F&& f) const { visit_impl(*this, std::forward<F>(f)); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Tensor& t) {
      for (double v : t.data()) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  friend bool operator==(const ViTParams& a, const ViTParams& b) {
    if (!(a.config == b.config)) return false;
    std::vector<const Tensor*> ta, tb;
    a.visit([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
    b.visit([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!bitwise_equal(*ta[i], *tb[i])) return false;
    return true;
  }
};

namespace detail {

inline Tensor init_weight(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = truncated_normal(rng, 0.02);
  return t;
}

inline Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{init_weight({in, out}, rng), Tensor({out})};
}

inline LayerNormParams init_norm(std::size_t d) {
  return LayerNormParams{Tensor({d}, 1.0), Tensor({d})};
}

}  // namespace detail

/// Truncated-normal (sigma 0.02, cut at 2 sigma) weights, zero biases, unit
/// layer-norm scales. cls_token and pos_embed use the same truncated normal.
inline ViTParams init_params(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, "vit.init"));
  const std::size_t d = config.embed_dim;
  ViTParams p;
  p.config = config;
  p.patch_embed = detail::init_linear(config.patch_dim(), d, rng);
  p.cls_token = detail::init_weight({d}, rng);
  p.pos_embed = detail::init_weight({config.tokens(), d}, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    EncoderBlock b;
    b.norm1 = detail::init_norm(d);
    b.q = detail::init_linear(d, d, rng);
    b.k = detail::init_linear(d, d, rng);
    b.v = detail::init_linear(d, d, rng);
    b.out = detail::init_linear(d, d, rng);
    b.norm2 = detail::init_norm(d);
    b.fc1 = detail::init_linear(d, config.mlp_hidden(), rng);
    b.fc2 = detail::init_linear(config.mlp_hidden(), d, rng);
    p.blocks.push_back(std::move(b));
  }
  p.norm = detail::init_norm(d);
  p.head_class = detail::init_linear(d, config.num_classes, rng);
  p.head_value = detail::init_linear(d, 1, rng);
  return p;
}

/// Splits an H x W x C image into non-overlapping patches. Patches are
/// ordered row-major over the patch grid; each patch vector is flattened in
/// (row, column, channel) order.
inline Tensor patchify(const Tensor& image, std::size_t patch) {
  require(image.rank() == 3, ErrorKind::Dimension,
          "patchify: expected H x W x C image, got " + shape_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  require(patch > 0 && h % patch == 0 && w % patch == 0, ErrorKind::Dimension,
          "patchify: image " + shape_string(image.shape()) +
              " is not divisible into patches of " + std::to_string(patch));
  const std::size_t ph = h / patch, pw = w / patch, len = patch * patch * c;
  Tensor out({ph * pw, len});
  for (std::size_t gy = 0; gy < ph; ++gy)
    for (std::size_t gx = 0; gx < pw; ++gx) {
      double* dst = out.data().data() + (gy * pw + gx) * len;
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t ch = 0; ch < c; ++ch)
            *dst++ = image[((gy * patch + y) * w + gx * patch + x) * c + ch];
    }
  return out;
}

/// Inverse of patchify.
inline Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width,
                         std::size_t channels, std::size_t patch) {
  require(patch > 0 && height % patch == 0 && width % patch == 0, ErrorKind::Dimension,
          "unpatchify: size not divisible by patch");
  const std::size_t ph = height / patch, pw = width / patch;
  require(patches.shape() == Shape{ph * pw, patch * patch * channels}, ErrorKind::Dimension,
          "unpatchify: unexpected patch tensor " + shape_string(patches.shape()));
  Tensor image({height, width, channels});
  const double* src = patches.data().data();
  for (std::size_t gy = 0; gy < ph; ++gy)
    for (std::size_t gx = 0; gx < pw; ++gx)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t ch = 0; ch < channels; ++ch)
            image[((gy * patch + y) * width + gx * patch + x) * channels + ch] = *src++;
  return image;
}

/// Stacks equally shaped H x W x C images into a B x H x W x C batch.
inline Tensor stack_images(const std::vector<const Tensor*>& images) {
  require(!images.empty(), ErrorKind::Contract, "stack_images: empty batch");
  const Shape& s = images.front()->shape();
  std::vector<double> data;
  data.reserve(images.size() * images.front()->size());
  for (const Tensor* img : images) {
    require(img->shape() == s, ErrorKind::Dimension, "stack_images: shape mismatch");
    data.insert(data.end(), img->data().begin(), img->data().end());
  }
  Shape shape{images.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(std::move(shape), std::move(data));
}

struct ModelOutput {
  Var class_logits;  // B x C
  Var values;        // B
};

/// Dual-head ViT forward pass:
/// patchify -> linear embed -> prepend cls token -> add position embeddings
/// -> depth x (x + MHSA(LN(x)), x + MLP(LN(x))) -> final LN -> cls token
/// -> class head and value head.
/// Tokens of all images are stacked so linear layers run as one matmul;
/// attention is computed per image and head, so examples never mix.
inline ModelOutput forward(Tape& tape, const ViTParams& params, const Tensor& batch,
                           bool train_mode = false, Rng* rng = nullptr) {
  const ViTConfig& cfg = params.config;
  require(batch.rank() == 4 && batch.dim(1) == cfg.image_size && batch.dim(2) == cfg.image_size &&
              batch.dim(3) == cfg.channels,
          ErrorKind::Dimension,
          "forward: batch " + shape_string(batch.shape()) + " does not match config [Bx" +
              std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
              std::to_string(cfg.channels) + "]");
  const double drop = train_mode ? cfg.dropout : 0.0;
  require(drop == 0.0 || rng != nullptr, ErrorKind::Contract,
          "forward: dropout in train mode needs an rng");

  const std::size_t B = batch.dim(0), k = cfg.num_patches(), T = cfg.tokens();
  const std::size_t d = cfg.embed_dim, H = cfg.heads, dh = cfg.head_dim();
  const std::size_t image_len = batch.size() / B;

  Tensor patches({B * k, cfg.patch_dim()});
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> px(batch.data().begin() + b * image_len,
                           batch.data().begin() + (b + 1) * image_len);
    Tensor image({cfg.image_size, cfg.image_size, cfg.channels}, std::move(px));
    Tensor p = patchify(image, cfg.patch_size);
    std::copy(p.data().begin(), p.data().end(), patches.data().begin() + b * p.size());
  }

  auto linear = [&](Var x, const Linear& l) {
    return add_bias(matmul(x, tape.parameter(l.weight)), tape.parameter(l.bias));
  };
  auto norm = [&](Var x, const LayerNormParams& n) {
    return layer_norm(x, tape.parameter(n.weight), tape.parameter(n.bias));
  };
  auto maybe_dropout = [&](Var x) { return drop > 0.0 ? dropout(x, drop, *rng) : x; };

  Var emb = linear(tape.constant(std::move(patches)), params.patch_embed);
  Var cls = reshape(tape.parameter(params.cls_token), {1, d});
  std::vector<Var> rows;
  rows.reserve(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    rows.push_back(cls);
    rows.push_back(slice_rows(emb, b * k, k));
  }
  Var x = add(concat_rows(rows), repeat_rows(tape.parameter(params.pos_embed), B));
  x = maybe_dropout(x);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const EncoderBlock& blk : params.blocks) {
    Var h = norm(x, blk.norm1);
    Var q = linear(h, blk.q);
    Var kk = linear(h, blk.k);
    Var v = linear(h, blk.v);
    std::vector<Var> per_image;
    per_image.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      Var qb = slice_rows(q, b * T, T);
      Var kb = slice_rows(kk, b * T, T);
      Var vb = slice_rows(v, b * T, T);
      std::vector<Var> heads;
      heads.reserve(H);
      for (std::size_t hd = 0; hd < H; ++hd) {
        Var qh = slice_cols(qb, hd * dh, dh);
        Var kh = slice_cols(kb, hd * dh, dh);
        Var vh = slice_cols(vb, hd * dh, dh);
        Var scores = scale(matmul(qh, transpose(kh)), attn_scale);
        heads.push_back(matmul(softmax(scores, 1), vh));
      }
      per_image.push_back(H == 1 ? heads.front() : concat_cols(heads));
    }
    Var attn = B == 1 ? per_image.front() : concat_rows(per_image);
    x = add(x, maybe_dropout(linear(attn, blk.out)));
    Var m = linear(gelu(linear(norm(x, blk.norm2), blk.fc1)), blk.fc2);
    x = add(x, maybe_dropout(m));
  }
  x = norm(x, params.norm);

  std::vector<Var> cls_rows;
  cls_rows.reserve(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows.push_back(slice_rows(x, b * T, 1));
  Var pooled = B == 1 ? cls_rows.front() : concat_rows(cls_rows);

  Var logits = linear(pooled, params.head_class);
  Var values = reshape(linear(pooled, params.head_value), {B});
  return ModelOutput{logits, values};
}

/// Argmax per row; ties go to the lowest class index.
inline std::vector<int> predict_class(const Tensor& class_logits) {
  require(class_logits.rank() == 2 && class_logits.dim(1) >= 2, ErrorKind::Dimension,
          "predict_class: expected B x C logits with C >= 2, got " +
              shape_string(class_logits.shape()));
  const std::size_t B = class_logits.dim(0), C = class_logits.dim(1);
  std::vector<int> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (class_logits[b * C + c] > class_logits[b * C + best]) best = c;
    out[b] = static_cast<int>(best);
  }
  return out;
}

struct InstancePrediction {
  int class_index = 0;
  double value = 0.0;  // SaO2 as a fraction (percent / 100)
  std::vector<double> mean_logits;
};

/// Instance-level prediction: per-slice logits and values are averaged, then
/// the class is the argmax of the mean logits (lowest index on ties).
inline InstancePrediction predict_instance(const ViTParams& params,
                                           const LabeledInstance& instance) {
  require(!instance.slices.empty(), ErrorKind::Contract,
          "predict_instance: instance '" + instance.instance_id + "' has no slices");
  std::vector<const Tensor*> images;
  for (const Tensor& s : instance.slices) images.push_back(&s);
  Tape tape;
  ModelOutput out = forward(tape, params, stack_images(images));
  const Tensor& logits = out.class_logits.value();
  const Tensor& values = out.values.value();
  const std::size_t n = images.size(), C = logits.dim(1);

  InstancePrediction pred;
  pred.mean_logits.assign(C, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) pred.mean_logits[c] += logits[i * C + c];
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) v += values[i];
  for (double& m : pred.mean_logits) m /= static_cast<double>(n);
  pred.value = v / static_cast<double>(n);
  pred.class_index = predict_class(Tensor({1, C}, pred.mean_logits)).front();
  return pred;
}

}  // namespace jointvit
