#pragma once

#include <cstddef>
#include <vector>

#include "protoscale/parameters.hpp"
#include "protoscale/rng.hpp"
#include "protoscale/tensor.hpp"

// Prototype grouping at one pyramid scale:
//
//   semantic      As = softmax over prototypes of ([S; R] F / tau + log prior),
//                 keeping only the S rows
//   instance      W  = softmax_i(cos(I_j, S_i) / tau),  Ai = W As
//   hierarchical  H  = sigmoid(e_j . e_l / sqrt(d_rel)), e = MLP(I), diag(H) = 1
//                 Ah = threshold(H) Ai
//
// Feature maps may be unbatched [d, HW] or batched [B, d, HW]; attention maps
// follow the same convention with the prototype axis in place of d.
namespace protoscale {

struct DegeneratePrototypeError : ParameterError {
  using ParameterError::ParameterError;
};

struct GroupingConfig {
  std::size_t semantic_prototypes = 16;   // Np
  std::size_t auxiliary_prototypes = 4;   // Nr
  std::size_t instance_prototypes = 8;    // Ni
  std::size_t dim = 32;                   // d
  std::size_t relation_dim = 32;          // d_rel
  double semantic_temperature = 0.1;
  double instance_temperature = 0.1;
  double affinity_threshold = 0.5;
  // l2-normalize features and prototypes before the semantic logits
  bool cosine_logits = true;
  // subtract each image's spatial mean feature before the semantic logits
  bool center_features = true;
  // subtract the mean relation embedding over prototypes before pairing
  bool center_relation = true;

  void validate() const;
};

/// Centered isotropic Gaussian over normalized pixel coordinates.
struct GaussianPrior {
  double mu = 0.5;
  double sigma = 0.7;
  bool enabled = true;

  /// log g(i, j) for every pixel of an h x w grid, row-major. All zeros when
  /// disabled.
  std::vector<double> log_weights(std::size_t h, std::size_t w) const;
};

/// Adds log g(i, j) to every prototype's logit at pixel (i, j). `logits` has
/// its last axis flattened over an h x w grid.
Tensor apply_gaussian_prior(const Tensor& logits, const GaussianPrior& prior, std::size_t h, std::size_t w);

struct SemanticAttention {
  Tensor semantic;  // As: first Np rows
  Tensor full;      // all Np + Nr rows (each column sums to 1)
};

/// `auxiliary` may be undefined or have zero rows.
SemanticAttention semantic_attention(const Tensor& features, const Tensor& semantic, const Tensor& auxiliary,
                                     const GaussianPrior& prior, std::size_t h, std::size_t w, double temperature,
                                     bool cosine = false);

/// W [Ni, Np]: row j is a softmax over semantic prototypes of cosine(S_i, I_j) / tau.
Tensor instance_assignment(const Tensor& semantic, const Tensor& instance, double temperature);

/// Ai = W As.
Tensor instance_attention(const Tensor& assignment, const Tensor& semantic_attention);

struct RelationMlp {
  Tensor w1, b1, w2, b2;  // w1 [d, d], b1 [d], w2 [d, d_rel], b2 [d_rel]
};

/// H [Ni, Ni]: symmetric, unit diagonal, entries in [0, 1].
/// With `centered`, embeddings are taken relative to their mean over prototypes.
Tensor relation_matrix(const Tensor& instance, const RelationMlp& mlp, bool centered = false);

/// Ah = H' Ai where H' zeroes affinities below `threshold` (straight-through).
Tensor hierarchical_attention(const Tensor& relation, const Tensor& instance_attention, double threshold);

/// Attention maps for one scale. Batched maps are [B, N, HW].
struct ScaleAttention {
  std::size_t height = 0, width = 0;
  Tensor semantic;       // As  [B, Np, HW]
  Tensor semantic_full;  //     [B, Np+Nr, HW]
  Tensor assignment;     // W   [Ni, Np]
  Tensor instance;       // Ai  [B, Ni, HW]
  Tensor relation;       // H   [Ni, Ni]
  Tensor hierarchical;   // Ah  [B, Ni, HW]
};

/// Learnable prototypes and relation MLP for one scale.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(const GroupingConfig& cfg, Rng& rng);

  /// features [B, d, h, w].
  ScaleAttention forward(const Tensor& features, const GaussianPrior& prior) const;

  const GroupingConfig& config() const { return cfg_; }
  Tensor& semantic() { return semantic_; }
  Tensor& auxiliary() { return auxiliary_; }
  Tensor& instance() { return instance_; }
  RelationMlp& relation_mlp() { return mlp_; }
  ParameterList parameters() const;

 private:
  GroupingConfig cfg_;
  Tensor semantic_;   // S [Np, d]
  Tensor auxiliary_;  // R [Nr, d]
  Tensor instance_;   // I [Ni, d]
  RelationMlp mlp_;
};

}  // namespace protoscale
