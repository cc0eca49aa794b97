#include "protoscale/encoder.hpp"

#include <cmath>
#include <string>

#include "protoscale/ops.hpp"

namespace protoscale {

void EncoderConfig::validate() const {
  if (input_size == 0 || input_size % 16 != 0) {
    throw ParameterError("encoder input_size must be a positive multiple of 16, got " + std::to_string(input_size));
  }
  for (auto c : channels)
    if (c == 0) throw ParameterError("encoder stage channels must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ParameterError("encoder dim " + std::to_string(dim) + " must be divisible by heads " + std::to_string(heads));
  }
  if (ffn_multiplier == 0) throw ParameterError("encoder ffn_multiplier must be positive");
}

ConvLayer::ConvLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, double init_std,
                     Rng& rng)
    : stride(stride_), padding(kernel / 2) {
  weight = Tensor::parameter({out, in, kernel, kernel}, rng.normal_vector(out * in * kernel * kernel, init_std));
  bias = Tensor::parameter({out}, std::vector<double>(out, 0.0));
}

Tensor ConvLayer::forward(const Tensor& x) const { return add_channel_bias(conv2d(x, weight, stride, padding), bias); }

namespace {

double he_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }
double lecun_std(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

ConvLayer relu_conv(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  return ConvLayer(in, out, 3, stride, he_std(in * 9), rng);
}

ConvLayer linear_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng) {
  return ConvLayer(in, out, kernel, stride, lecun_std(in * kernel * kernel), rng);
}

void add_conv(ParameterList& list, const std::string& name, const ConvLayer& c) {
  list.add(name + ".weight", c.weight);
  list.add(name + ".bias", c.bias);
}

Tensor ones(std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 1.0)); }
Tensor zeros(std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 0.0)); }

}  // namespace

// ---------------------------------------------------------------------------

SelfAttentionBlock::SelfAttentionBlock(std::size_t dim, std::size_t heads, std::size_t tokens,
                                       std::size_t ffn_multiplier, Rng& rng)
    : dim_(dim), heads_(heads), tokens_(tokens) {
  if (heads == 0 || dim % heads != 0) {
    throw ParameterError("attention dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t hidden = dim * ffn_multiplier;
  positional_ = Tensor::parameter({dim, tokens}, rng.normal_vector(dim * tokens, 0.02));
  norm1_gamma_ = ones(dim);
  norm1_beta_ = zeros(dim);
  norm2_gamma_ = ones(dim);
  norm2_beta_ = zeros(dim);
  auto mat = [&](std::size_t out, std::size_t in) {
    return Tensor::parameter({out, in}, rng.normal_vector(out * in, lecun_std(in)));
  };
  wq_ = mat(dim, dim);
  bq_ = zeros(dim);
  wk_ = mat(dim, dim);
  bk_ = zeros(dim);
  wv_ = mat(dim, dim);
  bv_ = zeros(dim);
  wo_ = mat(dim, dim);
  bo_ = zeros(dim);
  w1_ = Tensor::parameter({hidden, dim}, rng.normal_vector(hidden * dim, he_std(dim)));
  b1_ = zeros(hidden);
  w2_ = mat(dim, hidden);
  b2_ = zeros(dim);
}

// Per-token normalization over the channel axis of [B, d, T].
Tensor SelfAttentionBlock::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) const {
  Tensor centered = sub(x, mean(x, 1));
  Tensor var = mean(square(centered), 1);
  Tensor normed = div(centered, sqrt(add_scalar(var, 1e-5)));
  return add(mul(normed, reshape(gamma, {1, dim_, 1})), reshape(beta, {1, dim_, 1}));
}

Tensor SelfAttentionBlock::channel_linear(const Tensor& x, const Tensor& w, const Tensor& b) const {
  return add_channel_bias(bmm(w, x), b);
}

Tensor SelfAttentionBlock::forward(const Tensor& x, AttentionProbe* probe) const {
  if (x.rank() != 4 || x.dim(1) != dim_ || x.dim(2) * x.dim(3) != tokens_) {
    throw DimensionError("self-attention expects [B, " + std::to_string(dim_) + ", h, w] with h*w = " +
                         std::to_string(tokens_) + ", got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t head_dim = dim_ / heads_;
  Tensor tokens = add(reshape(x, {batch, dim_, tokens_}), positional_);

  Tensor normed = layer_norm(tokens, norm1_gamma_, norm1_beta_);
  Tensor q = channel_linear(normed, wq_, bq_);
  Tensor k = channel_linear(normed, wk_, bk_);
  Tensor v = channel_linear(normed, wv_, bv_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor qh = slice(q, 1, h * head_dim, head_dim);
    Tensor kh = slice(k, 1, h * head_dim, head_dim);
    Tensor vh = slice(v, 1, h * head_dim, head_dim);
    // scores[b, t, s] = <q_t, k_s> / sqrt(dh); rows normalized over keys s.
    Tensor scores = mul_scalar(bmm(transpose(qh, 1, 2), kh), scale);
    Tensor weights = softmax(scores, 2);
    if (probe) probe->weights.push_back(weights.detach());
    heads.push_back(bmm(vh, transpose(weights, 1, 2)));
  }
  Tensor attended = add(tokens, channel_linear(concat(heads, 1), wo_, bo_));

  Tensor ff = channel_linear(relu(channel_linear(layer_norm(attended, norm2_gamma_, norm2_beta_), w1_, b1_)), w2_, b2_);
  Tensor out = add(attended, ff);
  return reshape(out, x.shape());
}

ParameterList SelfAttentionBlock::parameters() const {
  ParameterList p;
  p.add("positional", positional_);
  p.add("norm1.gamma", norm1_gamma_);
  p.add("norm1.beta", norm1_beta_);
  p.add("query.weight", wq_);
  p.add("query.bias", bq_);
  p.add("key.weight", wk_);
  p.add("key.bias", bk_);
  p.add("value.weight", wv_);
  p.add("value.bias", bv_);
  p.add("out.weight", wo_);
  p.add("out.bias", bo_);
  p.add("norm2.gamma", norm2_gamma_);
  p.add("norm2.beta", norm2_beta_);
  p.add("ffn1.weight", w1_);
  p.add("ffn1.bias", b1_);
  p.add("ffn2.weight", w2_);
  p.add("ffn2.bias", b2_);
  return p;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto [c1, c2, c3] = cfg_.channels;
  const std::size_t d = cfg_.dim;
  backbone_ = {relu_conv(3, c1, 2, rng),  relu_conv(c1, c1, 2, rng), relu_conv(c1, c2, 2, rng),
               relu_conv(c2, c2, 1, rng), relu_conv(c2, c3, 2, rng), relu_conv(c3, c3, 1, rng)};
  lateral4_ = linear_conv(c1, d, 1, 1, rng);
  lateral8_ = linear_conv(c2, d, 1, 1, rng);
  lateral16_ = linear_conv(c3, d, 1, 1, rng);
  attention_ = SelfAttentionBlock(d, cfg_.heads, cfg_.coarse_tokens(), cfg_.ffn_multiplier, rng);
  topdown8_ = linear_conv(d, d, 1, 1, rng);
  topdown4_ = linear_conv(d, d, 1, 1, rng);
  bottomup4_ = linear_conv(d, d, 3, 2, rng);
  bottomup8_ = linear_conv(d, d, 3, 2, rng);
  for (auto& o : output_) o = linear_conv(d, d, 1, 1, rng);
}

StageOutputs Encoder::backbone_forward(const Tensor& images) const {
  const std::size_t s = cfg_.input_size;
  Tensor x = images;
  if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != s || x.dim(3) != s) {
    throw DimensionError("encoder expects images [B, 3, " + std::to_string(s) + ", " + std::to_string(s) + "], got " +
                         shape_str(images.shape()));
  }
  StageOutputs out;
  x = relu(backbone_[0].forward(x));
  out.stride4 = relu(backbone_[1].forward(x));
  x = relu(backbone_[2].forward(out.stride4));
  out.stride8 = relu(backbone_[3].forward(x));
  x = relu(backbone_[4].forward(out.stride8));
  out.stride16 = relu(backbone_[5].forward(x));
  return out;
}

Tensor Encoder::attend_coarse(const Tensor& stride16, AttentionProbe* probe) const {
  return attention_.forward(lateral16_.forward(stride16), probe);
}

FeaturePyramid Encoder::fuse_pyramid(const StageOutputs& stages, const Tensor& attended_coarse) const {
  // Top-down: coarse context flows to finer levels.
  Tensor top16 = attended_coarse;
  Tensor top8 = add(lateral8_.forward(stages.stride8), topdown8_.forward(upsample_nearest2x(top16)));
  Tensor top4 = add(lateral4_.forward(stages.stride4), topdown4_.forward(upsample_nearest2x(top8)));
  // Bottom-up: fine detail flows back to coarser levels.
  Tensor up4 = top4;
  Tensor up8 = add(top8, bottomup4_.forward(up4));
  Tensor up16 = add(top16, bottomup8_.forward(up8));
  FeaturePyramid p;
  p.levels = {output_[0].forward(up4), output_[1].forward(up8), output_[2].forward(up16)};
  return p;
}

FeaturePyramid Encoder::forward(const Tensor& images) const {
  StageOutputs stages = backbone_forward(images);
  return fuse_pyramid(stages, attend_coarse(stages.stride16));
}

ParameterList Encoder::parameters() const {
  ParameterList p;
  for (std::size_t i = 0; i < backbone_.size(); ++i) add_conv(p, "backbone" + std::to_string(i), backbone_[i]);
  add_conv(p, "lateral4", lateral4_);
  add_conv(p, "lateral8", lateral8_);
  add_conv(p, "lateral16", lateral16_);
  p.append("attention.", attention_.parameters());
  add_conv(p, "topdown8", topdown8_);
  add_conv(p, "topdown4", topdown4_);
  add_conv(p, "bottomup4", bottomup4_);
  add_conv(p, "bottomup8", bottomup8_);
  for (std::size_t i = 0; i < output_.size(); ++i) add_conv(p, "output" + std::to_string(i + 1), output_[i]);
  return p;
}

}  // namespace protoscale
