#include "protoscale/grouping.hpp"

#include <cmath>
#include <string>

#include "protoscale/ops.hpp"

namespace protoscale {

void GroupingConfig::validate() const {
  if (semantic_prototypes < 2) throw ParameterError("need at least 2 semantic prototypes");
  if (instance_prototypes < 1) throw ParameterError("need at least 1 instance prototype");
  if (dim == 0 || relation_dim == 0) throw ParameterError("prototype dims must be positive");
  if (!(semantic_temperature > 0.0) || !(instance_temperature > 0.0)) {
    throw ParameterError("grouping temperatures must be > 0");
  }
  if (!(affinity_threshold >= 0.0 && affinity_threshold <= 1.0)) {
    throw ParameterError("affinity threshold must lie in [0, 1]");
  }
}

std::vector<double> GaussianPrior::log_weights(std::size_t h, std::size_t w) const {
  std::vector<double> out(h * w, 0.0);
  if (!enabled) return out;
  if (!(sigma > 0.0)) throw ParameterError("prior sigma must be > 0");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < h; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
    for (std::size_t j = 0; j < w; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
      out[i * w + j] = -((x - mu) * (x - mu) + (y - mu) * (y - mu)) * inv;
    }
  }
  return out;
}

Tensor apply_gaussian_prior(const Tensor& logits, const GaussianPrior& prior, std::size_t h, std::size_t w) {
  if (logits.rank() == 0 || logits.dim(logits.rank() - 1) != h * w) {
    throw DimensionError("prior grid " + std::to_string(h) + "x" + std::to_string(w) + " does not match logits " +
                         shape_str(logits.shape()));
  }
  if (!prior.enabled) return logits;
  return add(logits, Tensor({h * w}, prior.log_weights(h, w)));
}

SemanticAttention semantic_attention(const Tensor& features, const Tensor& semantic, const Tensor& auxiliary,
                                     const GaussianPrior& prior, std::size_t h, std::size_t w, double temperature,
                                     bool cosine) {
  if (!(temperature > 0.0)) throw ParameterError("semantic temperature must be > 0");
  const std::size_t np = semantic.dim(0);
  const bool has_aux = auxiliary.defined() && auxiliary.numel() > 0;
  Tensor prototypes = has_aux ? concat({semantic, auxiliary}, 0) : semantic;
  const std::size_t proto_axis = features.rank() == 3 ? 1 : 0;
  Tensor f = features;
  if (cosine) {
    prototypes = div(prototypes, sqrt(add_scalar(sum(square(prototypes), 1, true), 1e-12)));
    f = div(features, sqrt(add_scalar(sum(square(features), proto_axis, true), 1e-12)));
  }
  Tensor logits = mul_scalar(bmm(prototypes, f), 1.0 / temperature);
  // A per-pixel offset shared by every competitor cancels in the softmax, so
  // the prior only biases the semantic rows against the auxiliary sinks.
  if (has_aux && prior.enabled) {
    const std::size_t total = logits.dim(proto_axis);
    logits = concat({apply_gaussian_prior(slice(logits, proto_axis, 0, np), prior, h, w),
                     slice(logits, proto_axis, np, total - np)},
                    proto_axis);
  }
  Tensor full = softmax(logits, proto_axis);
  return {has_aux ? slice(full, proto_axis, 0, np) : full, full};
}

namespace {

Tensor normalize_rows(const Tensor& m, const char* what) {
  auto d = m.data();
  const std::size_t cols = m.dim(1);
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += d[r * cols + c] * d[r * cols + c];
    if (ss == 0.0) throw DegeneratePrototypeError(std::string(what) + " prototype " + std::to_string(r) + " has zero norm");
  }
  return div(m, sqrt(sum(square(m), 1)));
}

}  // namespace

Tensor instance_assignment(const Tensor& semantic, const Tensor& instance, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("instance temperature must be > 0");
  if (semantic.rank() != 2 || instance.rank() != 2 || semantic.dim(1) != instance.dim(1)) {
    throw DimensionError("instance_assignment: " + shape_str(semantic.shape()) + " vs " + shape_str(instance.shape()));
  }
  Tensor cosine = matmul(normalize_rows(instance, "instance"), transpose(normalize_rows(semantic, "semantic"), 0, 1));
  return softmax(cosine, 1, temperature);
}

Tensor instance_attention(const Tensor& assignment, const Tensor& semantic_attention) {
  const std::size_t np = semantic_attention.dim(semantic_attention.rank() == 3 ? 1 : 0);
  if (assignment.rank() != 2 || assignment.dim(1) != np) {
    throw DimensionError("instance_attention: assignment " + shape_str(assignment.shape()) + " vs attention " +
                         shape_str(semantic_attention.shape()));
  }
  return bmm(assignment, semantic_attention);
}

Tensor relation_matrix(const Tensor& instance, const RelationMlp& mlp, bool centered) {
  const std::size_t ni = instance.dim(0);
  const std::size_t hidden_dim = mlp.w1.dim(1);
  const std::size_t rel_dim = mlp.w2.dim(1);
  Tensor hidden = relu(add(matmul(instance, mlp.w1), reshape(mlp.b1, {1, hidden_dim})));
  Tensor embed = add(matmul(hidden, mlp.w2), reshape(mlp.b2, {1, rel_dim}));
  if (centered) embed = sub(embed, mean(embed, 0));
  Tensor gram = mul_scalar(matmul(embed, transpose(embed, 0, 1)), 1.0 / std::sqrt(static_cast<double>(rel_dim)));
  std::vector<double> off(ni * ni, 1.0), eye(ni * ni, 0.0);
  for (std::size_t i = 0; i < ni; ++i) {
    off[i * ni + i] = 0.0;
    eye[i * ni + i] = 1.0;
  }
  return add(mul(sigmoid(gram), Tensor({ni, ni}, std::move(off))), Tensor({ni, ni}, std::move(eye)));
}

Tensor hierarchical_attention(const Tensor& relation, const Tensor& instance_attention, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ParameterError("affinity threshold must lie in [0, 1]");
  return bmm(threshold_straight_through(relation, threshold), instance_attention);
}

PrototypeBank::PrototypeBank(const GroupingConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.dim;
  const double proto_std = 1.0 / std::sqrt(static_cast<double>(d));
  semantic_ = Tensor::parameter({cfg_.semantic_prototypes, d}, rng.normal_vector(cfg_.semantic_prototypes * d, proto_std));
  auxiliary_ =
      Tensor::parameter({cfg_.auxiliary_prototypes, d}, rng.normal_vector(cfg_.auxiliary_prototypes * d, proto_std));
  instance_ = Tensor::parameter({cfg_.instance_prototypes, d}, rng.normal_vector(cfg_.instance_prototypes * d, proto_std));
  mlp_.w1 = Tensor::parameter({d, d}, rng.normal_vector(d * d, std::sqrt(2.0 / static_cast<double>(d))));
  mlp_.b1 = Tensor::parameter({d}, std::vector<double>(d, 0.0));
  mlp_.w2 = Tensor::parameter({d, cfg_.relation_dim},
                              rng.normal_vector(d * cfg_.relation_dim, std::sqrt(1.0 / static_cast<double>(d))));
  mlp_.b2 = Tensor::parameter({cfg_.relation_dim}, std::vector<double>(cfg_.relation_dim, 0.0));
}

ScaleAttention PrototypeBank::forward(const Tensor& features, const GaussianPrior& prior) const {
  if (features.rank() != 4 || features.dim(1) != cfg_.dim) {
    throw DimensionError("prototype bank expects [B, " + std::to_string(cfg_.dim) + ", h, w], got " +
                         shape_str(features.shape()));
  }
  ScaleAttention out;
  out.height = features.dim(2);
  out.width = features.dim(3);
  Tensor flat = reshape(features, {features.dim(0), cfg_.dim, out.height * out.width});
  if (cfg_.center_features) flat = sub(flat, mean(flat, 2));
  SemanticAttention sem =
      semantic_attention(flat, semantic_, auxiliary_, prior, out.height, out.width, cfg_.semantic_temperature,
                         cfg_.cosine_logits);
  out.semantic = sem.semantic;
  out.semantic_full = sem.full;
  out.assignment = instance_assignment(semantic_, instance_, cfg_.instance_temperature);
  out.instance = instance_attention(out.assignment, out.semantic);
  out.relation = relation_matrix(instance_, mlp_, cfg_.center_relation);
  out.hierarchical = hierarchical_attention(out.relation, out.instance, cfg_.affinity_threshold);
  return out;
}

ParameterList PrototypeBank::parameters() const {
  ParameterList p;
  p.add("semantic", semantic_);
  if (auxiliary_.numel() > 0) p.add("auxiliary", auxiliary_);
  p.add("instance", instance_);
  p.add("relation.w1", mlp_.w1);
  p.add("relation.b1", mlp_.b1);
  p.add("relation.w2", mlp_.w2);
  p.add("relation.b2", mlp_.b2);
  return p;
}

}  // namespace protoscale
