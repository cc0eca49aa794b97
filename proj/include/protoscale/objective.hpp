#pragma once

#include <cstddef>
#include <vector>

#include "protoscale/grouping.hpp"
#include "protoscale/tensor.hpp"

// Student-vs-teacher objective over batched attention maps.
//
// Every loss takes one tensor per scale. Student maps are [V, N, HW] with
// V = images * views, laid out image-major (view v of image b at b*views+v);
// teacher maps are [images, N, HW] and are treated as constants. Columns are
// renormalized to distributions before comparison.
namespace protoscale {

struct LossWeights {
  double semantic = 1.0;
  double instance = 2.0;
  double hierarchical = 1.0;
  double sparsity = 0.1;
  double diversity = 0.1;

  void validate() const;
};

struct InstanceTerms {
  Tensor consistency;
  Tensor sparsity;
  Tensor diversity;
};

struct ScaleLoss {
  double semantic = 0, consistency = 0, sparsity = 0, diversity = 0, hierarchical = 0;
};

struct LossParts {
  Tensor semantic;
  InstanceTerms instance;
  Tensor hierarchical;
  std::vector<ScaleLoss> per_scale;
};

struct LossReport {
  Tensor total_tensor;  // tape-connected scalar for backward
  double total = 0;
  double semantic = 0;
  double instance = 0;  // consistency term
  double hierarchical = 0;
  double sparsity = 0;
  double diversity = 0;
  std::vector<ScaleLoss> per_scale;
};

/// x / sum_axis(x). Throws DistributionError when a column sums to zero.
Tensor normalize_columns(const Tensor& x, std::size_t axis);

/// Repeats each teacher map `views` times along axis 0 as a constant.
Tensor expand_teacher(const Tensor& teacher, std::size_t views);

Tensor semantic_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher);
InstanceTerms instance_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher);
Tensor hierarchical_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher);

/// Mean pairwise overlap of row-normalized maps of one [V, N, HW] tensor.
Tensor diversity_penalty(const Tensor& maps);
/// Mean per-pixel entropy of the column distributions of [V, N, HW].
Tensor mean_entropy(const Tensor& maps);

/// All five terms from paired per-scale attention sets, with the per-scale
/// breakdown filled in.
LossParts compute_loss_parts(const std::vector<ScaleAttention>& student, const std::vector<ScaleAttention>& teacher);

/// total = l_sem sem + l_inst (consistency + l_sp sparsity + l_div diversity) + l_hier hier
LossReport total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace protoscale
