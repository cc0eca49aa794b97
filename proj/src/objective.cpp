#include "protoscale/objective.hpp"

#include <string>

#include "protoscale/ops.hpp"

namespace protoscale {

void LossWeights::validate() const {
  for (double w : {semantic, instance, hierarchical, sparsity, diversity}) {
    if (!(w >= 0.0)) throw ParameterError("loss weights must be nonnegative");
  }
}

Tensor normalize_columns(const Tensor& x, std::size_t axis) {
  Tensor totals = sum(x, axis, true);
  for (double t : totals.data()) {
    if (!(t > 0.0)) throw DistributionError("degenerate distribution: attention column sums to " + std::to_string(t));
  }
  return div(x, totals);
}

Tensor expand_teacher(const Tensor& teacher, std::size_t views) {
  if (teacher.rank() < 1) throw DimensionError("teacher maps need a leading image axis");
  Shape shape = teacher.shape();
  const std::size_t per = teacher.numel() / shape[0];
  std::vector<double> out;
  out.reserve(teacher.numel() * views);
  auto d = teacher.data();
  for (std::size_t b = 0; b < shape[0]; ++b) {
    auto first = d.begin() + static_cast<long>(b * per);
    for (std::size_t v = 0; v < views; ++v) out.insert(out.end(), first, first + static_cast<long>(per));
  }
  shape[0] *= views;
  return Tensor(std::move(shape), std::move(out));
}

namespace {

void check_pairing(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, const char* what) {
  if (student.empty() || student.size() != teacher.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(student.size()) + " student scales vs " +
                        std::to_string(teacher.size()) + " teacher scales");
  }
  for (std::size_t k = 0; k < student.size(); ++k) {
    const Tensor& s = student[k];
    const Tensor& t = teacher[k];
    if (s.rank() != 3 || t.rank() != 3 || t.dim(0) == 0 || s.dim(0) % t.dim(0) != 0 || s.dim(1) != t.dim(1) ||
        s.dim(2) != t.dim(2)) {
      throw ContractError(std::string(what) + ": student " + shape_str(s.shape()) + " cannot pair with teacher " +
                          shape_str(t.shape()));
    }
  }
}

// KL(teacher || student) of column distributions at one scale.
Tensor scale_kl(const Tensor& student, const Tensor& teacher) {
  const std::size_t views = student.dim(0) / teacher.dim(0);
  Tensor target;
  {
    NoGradGuard no_grad;
    target = normalize_columns(expand_teacher(teacher.detach(), views), 1);
  }
  return kl_divergence(target, normalize_columns(student, 1), 1);
}

Tensor mean_over_scales(const std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, terms[k]);
  return mul_scalar(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor semantic_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher) {
  check_pairing(student, teacher, "semantic_loss");
  std::vector<Tensor> per;
  for (std::size_t k = 0; k < student.size(); ++k) per.push_back(scale_kl(student[k], teacher[k]));
  return mean_over_scales(per);
}

Tensor mean_entropy(const Tensor& maps) {
  Tensor q = normalize_columns(maps, 1);
  return neg(mean(sum(mul(q, log(q)), 1, false)));
}

Tensor diversity_penalty(const Tensor& maps) {
  if (maps.rank() != 3) throw DimensionError("diversity_penalty expects [V, N, HW], got " + shape_str(maps.shape()));
  const std::size_t v = maps.dim(0), n = maps.dim(1);
  if (n < 2) return mul_scalar(sum(maps), 0.0);
  Tensor norms = sqrt(sum(square(maps), 2, true));
  for (double x : norms.data()) {
    if (!(x > 0.0)) throw DistributionError("diversity_penalty: an attention map is identically zero");
  }
  Tensor unit = div(maps, norms);
  Tensor gram = bmm(unit, transpose(unit, 1, 2));
  std::vector<double> off(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off[i * n + i] = 0.0;
  Tensor masked = mul(gram, Tensor({n, n}, std::move(off)));
  return mul_scalar(sum(masked), 1.0 / static_cast<double>(v * n * (n - 1)));
}

InstanceTerms instance_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher) {
  check_pairing(student, teacher, "instance_loss");
  std::vector<Tensor> consistency, sparsity, diversity;
  for (std::size_t k = 0; k < student.size(); ++k) {
    consistency.push_back(scale_kl(student[k], teacher[k]));
    sparsity.push_back(mean_entropy(student[k]));
    diversity.push_back(diversity_penalty(student[k]));
  }
  return {mean_over_scales(consistency), mean_over_scales(sparsity), mean_over_scales(diversity)};
}

Tensor hierarchical_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher) {
  check_pairing(student, teacher, "hierarchical_loss");
  std::vector<Tensor> per;
  for (std::size_t k = 0; k < student.size(); ++k) per.push_back(scale_kl(student[k], teacher[k]));
  return mean_over_scales(per);
}

LossParts compute_loss_parts(const std::vector<ScaleAttention>& student, const std::vector<ScaleAttention>& teacher) {
  if (student.empty() || student.size() != teacher.size()) {
    throw ContractError("compute_loss_parts: scale count mismatch");
  }
  std::vector<Tensor> ss, ts, si, ti, sh, th;
  for (std::size_t k = 0; k < student.size(); ++k) {
    ss.push_back(student[k].semantic);
    ts.push_back(teacher[k].semantic);
    si.push_back(student[k].instance);
    ti.push_back(teacher[k].instance);
    sh.push_back(student[k].hierarchical);
    th.push_back(teacher[k].hierarchical);
  }
  check_pairing(ss, ts, "semantic_loss");
  check_pairing(si, ti, "instance_loss");
  check_pairing(sh, th, "hierarchical_loss");

  std::vector<Tensor> sem, cons, sparse, div_terms, hier;
  LossParts parts;
  for (std::size_t k = 0; k < student.size(); ++k) {
    sem.push_back(scale_kl(ss[k], ts[k]));
    cons.push_back(scale_kl(si[k], ti[k]));
    sparse.push_back(mean_entropy(si[k]));
    div_terms.push_back(diversity_penalty(si[k]));
    hier.push_back(scale_kl(sh[k], th[k]));
    parts.per_scale.push_back(
        {sem[k].item(), cons[k].item(), sparse[k].item(), div_terms[k].item(), hier[k].item()});
  }
  parts.semantic = mean_over_scales(sem);
  parts.instance = {mean_over_scales(cons), mean_over_scales(sparse), mean_over_scales(div_terms)};
  parts.hierarchical = mean_over_scales(hier);
  return parts;
}

LossReport total_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  Tensor instance_block = add(parts.instance.consistency,
                              add(mul_scalar(parts.instance.sparsity, w.sparsity),
                                  mul_scalar(parts.instance.diversity, w.diversity)));
  LossReport r;
  r.total_tensor = add(add(mul_scalar(parts.semantic, w.semantic), mul_scalar(instance_block, w.instance)),
                       mul_scalar(parts.hierarchical, w.hierarchical));
  r.total = r.total_tensor.item();
  r.semantic = parts.semantic.item();
  r.instance = parts.instance.consistency.item();
  r.hierarchical = parts.hierarchical.item();
  r.sparsity = parts.instance.sparsity.item();
  r.diversity = parts.instance.diversity.item();
  r.per_scale = parts.per_scale;
  return r;
}

}  // namespace protoscale
