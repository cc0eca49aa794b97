#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "protoscale/parameters.hpp"
#include "protoscale/rng.hpp"
#include "protoscale/tensor.hpp"

// Small hybrid CNN/attention pyramid encoder: a 3-stage convolutional
// backbone (strides 4/8/16), one pre-norm self-attention block on the
// coarsest map, and top-down + bottom-up fusion into three maps of equal
// channel width.
namespace protoscale {

struct EncoderConfig {
  std::size_t input_size = 64;
  std::array<std::size_t, 3> channels{32, 64, 128};
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 2;

  /// Throws ParameterError on an invalid combination.
  void validate() const;
  std::size_t coarse_tokens() const { return (input_size / 16) * (input_size / 16); }
};

/// Convolution with bias. Kernel [Cout, Cin, k, k].
struct ConvLayer {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, double init_std, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

/// Raw outputs of the three backbone stages, each [B, c_k, s/2^(k+1), s/2^(k+1)].
struct StageOutputs {
  Tensor stride4, stride8, stride16;
};

/// Three aligned maps [B, d, s/4, s/4], [B, d, s/8, s/8], [B, d, s/16, s/16].
struct FeaturePyramid {
  std::array<Tensor, 3> levels;
};

/// Optional sink for per-head attention weights, each [B, T, T].
struct AttentionProbe {
  std::vector<Tensor> weights;
};

class SelfAttentionBlock {
 public:
  SelfAttentionBlock() = default;
  SelfAttentionBlock(std::size_t dim, std::size_t heads, std::size_t tokens, std::size_t ffn_multiplier, Rng& rng);

  /// x [B, d, h, w] with h*w equal to the configured token count.
  Tensor forward(const Tensor& x, AttentionProbe* probe = nullptr) const;
  ParameterList parameters() const;

  Tensor& positional() { return positional_; }

 private:
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) const;
  Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& b) const;

  std::size_t dim_ = 0, heads_ = 0, tokens_ = 0;
  Tensor positional_;  // [d, T]
  Tensor norm1_gamma_, norm1_beta_, norm2_gamma_, norm2_beta_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor w1_, b1_, w2_, b2_;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  /// images [3, s, s] or [B, 3, s, s] with values in [0, 1].
  StageOutputs backbone_forward(const Tensor& images) const;
  /// Projects the stride-16 stage to width d and runs self-attention on it.
  Tensor attend_coarse(const Tensor& stride16, AttentionProbe* probe = nullptr) const;
  FeaturePyramid fuse_pyramid(const StageOutputs& stages, const Tensor& attended_coarse) const;
  FeaturePyramid forward(const Tensor& images) const;

  SelfAttentionBlock& attention() { return attention_; }
  ParameterList parameters() const;

 private:
  EncoderConfig cfg_;
  std::array<ConvLayer, 6> backbone_;
  ConvLayer lateral4_, lateral8_, lateral16_;
  ConvLayer topdown8_, topdown4_;
  ConvLayer bottomup4_, bottomup8_;
  std::array<ConvLayer, 3> output_;
  SelfAttentionBlock attention_;
};

}  // namespace protoscale
