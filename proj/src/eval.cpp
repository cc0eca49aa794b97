#include "protoscale/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

namespace protoscale {

namespace {

LabelGrid argmax_raw(const double* a, std::size_t n, std::size_t h, std::size_t w, std::size_t target) {
  if (target % h != 0 || target % w != 0) {
    throw DimensionError("target resolution " + std::to_string(target) + " is not a multiple of " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t hw = h * w, fy = target / h, fx = target / w;
  LabelGrid out(target, target);
  for (std::size_t y = 0; y < target; ++y)
    for (std::size_t x = 0; x < target; ++x) {
      const std::size_t p = (y / fy) * w + x / fx;
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (a[i * hw + p] > a[best * hw + p]) best = i;
      out.labels[y * target + x] = static_cast<int>(best);
    }
  return out;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

void check_pair(const LabelGrid& a, const LabelGrid& b, const std::vector<std::uint8_t>& mask) {
  if (a.labels.size() != b.labels.size() || a.labels.size() != mask.size()) {
    throw DimensionError("partition grids and mask differ in size");
  }
}

}  // namespace

LabelGrid LabelGrid::from_map(const LabelMap& map) {
  LabelGrid g(map.height, map.width);
  for (std::size_t i = 0; i < map.ids.size(); ++i) g.labels[i] = map.ids[i];
  return g;
}

LabelGrid argmax_segmentation(const Tensor& attention, std::size_t h, std::size_t w, std::size_t target) {
  if (attention.rank() != 2 || attention.dim(1) != h * w) {
    throw DimensionError("argmax_segmentation expects [N, " + std::to_string(h * w) + "], got " +
                         shape_str(attention.shape()));
  }
  return argmax_raw(attention.data().data(), attention.dim(0), h, w, target);
}

double adjusted_rand_index(const LabelGrid& pred, const LabelGrid& truth, const std::vector<std::uint8_t>& mask) {
  check_pair(pred, truth, mask);
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  double n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    joint[{pred.labels[i], truth.labels[i]}] += 1;
    rows[pred.labels[i]] += 1;
    cols[truth.labels[i]] += 1;
    n += 1;
  }
  if (n == 0) throw ParameterError("adjusted_rand_index: empty mask");
  double index = 0, a = 0, b = 0;
  for (const auto& [k, v] : joint) index += choose2(v);
  for (const auto& [k, v] : rows) a += choose2(v);
  for (const auto& [k, v] : cols) b += choose2(v);
  const double total = choose2(n);
  const double expected = total > 0 ? a * b / total : 0.0;
  const double maximum = 0.5 * (a + b);
  if (maximum == expected) return 0.0;
  return (index - expected) / (maximum - expected);
}

double purity(const LabelGrid& pred, const LabelGrid& truth, const std::vector<std::uint8_t>& mask) {
  check_pair(pred, truth, mask);
  std::map<int, std::map<int, std::size_t>> counts;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++counts[pred.labels[i]][truth.labels[i]];
    ++n;
  }
  if (n == 0) throw ParameterError("purity: empty mask");
  std::size_t hit = 0;
  for (const auto& [cluster, classes] : counts) {
    std::size_t best = 0;
    for (const auto& [c, k] : classes) best = std::max(best, k);
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

CollapseMetrics collapse_metrics(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ParameterError("collapse_metrics needs at least one map");
  const std::size_t n = maps[0].rank() == 3 ? maps[0].dim(1) : maps[0].dim(0);
  std::vector<double> mass(n, 0.0);
  for (const auto& m : maps) {
    const bool batched = m.rank() == 3;
    if (!(m.rank() == 2 || batched) || (batched ? m.dim(1) : m.dim(0)) != n) {
      throw DimensionError("collapse_metrics: inconsistent map shape " + shape_str(m.shape()));
    }
    const std::size_t batch = batched ? m.dim(0) : 1;
    const std::size_t hw = m.dim(m.rank() - 1);
    auto d = m.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) mass[i] += d[(b * n + i) * hw + p];
  }
  double total = 0;
  for (double v : mass) total += v;
  CollapseMetrics out;
  out.usage.resize(n, 0.0);
  if (!(total > 0)) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out.usage[i] = mass[i] / total;
    if (out.usage[i] > 0) out.entropy -= out.usage[i] * std::log(out.usage[i]);
    if (out.usage[i] > 1.0 / (10.0 * static_cast<double>(n))) ++out.active;
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["n_scenes"] = n_scenes;
  j["n_composite"] = n_composite;
  j["semantic_purity"] = semantic_purity;
  j["instance_ari"] = instance_ari;
  j["hierarchy_ari"] = hierarchy_ari;
  j["composite_instance_ari"] = composite_instance_ari;
  j["prototype_usage_entropy"] = prototype_usage_entropy;
  j["per_scale"] = nlohmann::ordered_json::array();
  const int strides[3] = {4, 8, 16};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& s = per_scale[k];
    nlohmann::ordered_json e;
    e["stride"] = strides[k];
    e["semantic_purity"] = s.semantic_purity;
    e["instance_ari"] = s.instance_ari;
    e["hierarchy_ari"] = s.hierarchy_ari;
    e["composite_instance_ari"] = s.composite_instance_ari;
    e["usage_entropy"] = s.usage_entropy;
    e["active_prototypes"] = s.active_prototypes;
    j["per_scale"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string MetricsReport::csv_header() {
  return "step,n_scenes,semantic_purity,instance_ari,hierarchy_ari,composite_instance_ari,prototype_usage_entropy";
}

std::string MetricsReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g", static_cast<unsigned long long>(step),
                n_scenes, semantic_purity, instance_ari, hierarchy_ari, composite_instance_ari,
                prototype_usage_entropy);
  return buf;
}

MetricsReport evaluate(const Network& net, const std::vector<Scene>& scenes, std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  MetricsReport report;
  report.n_scenes = scenes.size();
  std::array<std::vector<Tensor>, 3> usage_maps;
  std::array<double, 3> purity_sum{}, inst_sum{}, hier_sum{}, comp_inst_sum{};
  std::size_t n_fg = 0;

  NoGradGuard no_grad;
  for (std::size_t start = 0; start < scenes.size(); start += batch_size) {
    const std::size_t stop = std::min(scenes.size(), start + batch_size);
    std::vector<Image> images;
    for (std::size_t i = start; i < stop; ++i) images.push_back(scenes[i].image);
    const NetworkOutput out = net.forward(stack_images(images));

    for (std::size_t i = start; i < stop; ++i) {
      const Scene& scene = scenes[i];
      const std::size_t s = scene.image.height;
      const std::size_t b = i - start;
      std::vector<std::uint8_t> all(s * s, 1), fg(s * s, 0);
      bool has_fg = false;
      for (std::size_t p = 0; p < s * s; ++p) {
        fg[p] = scene.instance.ids[p] != 0;
        has_fg = has_fg || fg[p];
      }
      const bool composite = has_fg && scene.has_composite();
      if (has_fg) ++n_fg;
      const LabelGrid sem_truth = LabelGrid::from_map(scene.semantic);
      const LabelGrid inst_truth = LabelGrid::from_map(scene.instance);
      const LabelGrid group_truth = LabelGrid::from_map(scene.group);

      for (std::size_t k = 0; k < 3; ++k) {
        const ScaleAttention& a = out.scales[k];
        const std::size_t h = a.height, w = a.width, hw = h * w;
        const std::size_t np = a.semantic.dim(1), ni = a.instance.dim(1);
        const LabelGrid sem = argmax_raw(a.semantic.data().data() + b * np * hw, np, h, w, s);
        purity_sum[k] += purity(sem, sem_truth, all);
        if (!has_fg) continue;
        const LabelGrid inst = argmax_raw(a.instance.data().data() + b * ni * hw, ni, h, w, s);
        const double inst_ari = adjusted_rand_index(inst, inst_truth, fg);
        inst_sum[k] += inst_ari;
        if (composite) {
          const LabelGrid hier = argmax_raw(a.hierarchical.data().data() + b * ni * hw, ni, h, w, s);
          hier_sum[k] += adjusted_rand_index(hier, group_truth, fg);
          comp_inst_sum[k] += inst_ari;
        }
      }
      if (composite) ++report.n_composite;
    }
    for (std::size_t k = 0; k < 3; ++k) usage_maps[k].push_back(out.scales[k].semantic.detach());
  }

  auto avg = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
  double entropy_sum = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    ScaleMetrics& m = report.per_scale[k];
    m.semantic_purity = avg(purity_sum[k], scenes.size());
    m.instance_ari = avg(inst_sum[k], n_fg);
    m.hierarchy_ari = avg(hier_sum[k], report.n_composite);
    m.composite_instance_ari = avg(comp_inst_sum[k], report.n_composite);
    if (!scenes.empty()) {
      const CollapseMetrics c = collapse_metrics(usage_maps[k]);
      m.usage_entropy = c.entropy;
      m.active_prototypes = c.active;
    }
    entropy_sum += m.usage_entropy;
  }
  report.semantic_purity = report.per_scale[0].semantic_purity;
  report.instance_ari = report.per_scale[0].instance_ari;
  report.hierarchy_ari = report.per_scale[0].hierarchy_ari;
  report.composite_instance_ari = report.per_scale[0].composite_instance_ari;
  report.prototype_usage_entropy = entropy_sum / 3.0;
  return report;
}

std::array<double, 3> palette_color(std::size_t index) {
  static constexpr std::array<std::array<double, 3>, 16> kPalette{{
      {0.90, 0.10, 0.29}, {0.24, 0.71, 0.29}, {1.00, 0.88, 0.10}, {0.26, 0.39, 0.85},
      {0.96, 0.51, 0.19}, {0.57, 0.12, 0.71}, {0.27, 0.94, 0.94}, {0.94, 0.20, 0.90},
      {0.74, 0.96, 0.05}, {0.98, 0.75, 0.83}, {0.00, 0.50, 0.50}, {0.86, 0.75, 1.00},
      {0.60, 0.39, 0.14}, {1.00, 0.98, 0.78}, {0.50, 0.00, 0.00}, {0.00, 0.00, 0.46},
  }};
  return kPalette[index % kPalette.size()];
}

LabelMap normalized_map(std::span<const double> values, std::size_t h, std::size_t w) {
  if (values.size() != h * w) throw DimensionError("normalized_map: value count does not match grid");
  LabelMap out(h, w, 128);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out.ids[i] = to_byte((values[i] - *lo) / range);
  return out;
}

std::size_t export_attention_images(const std::vector<ScaleAttention>& scales, const Image& image,
                                    const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::size_t files = 0;
  char name[64];
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const ScaleAttention& a = scales[k];
    const std::size_t h = a.height, w = a.width, hw = h * w;
    auto emit = [&](const Tensor& maps, const char* tag) {
      const std::size_t n = maps.dim(maps.rank() - 2);
      auto d = maps.data();
      for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(name, sizeof name, "scale%zu_%s_%02zu.pgm", k, tag, i);
        write_pgm(out_dir / name, normalized_map(d.subspan(i * hw, hw), h, w));
        ++files;
      }
    };
    emit(a.semantic, "semantic");
    emit(a.instance, "instance");
    emit(a.hierarchical, "hierarchical");

    const std::size_t np = a.semantic.dim(a.semantic.rank() - 2);
    const LabelGrid seg = argmax_raw(a.semantic.data().data(), np, h, w, image.height);
    Image overlay = image;
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) {
        const auto color = palette_color(static_cast<std::size_t>(seg.labels[y * image.width + x]));
        for (std::size_t c = 0; c < 3; ++c) overlay.at(c, y, x) = 0.5 * image.at(c, y, x) + 0.5 * color[c];
      }
    std::snprintf(name, sizeof name, "scale%zu_overlay.ppm", k);
    write_ppm(out_dir / name, overlay);
    ++files;
  }
  return files;
}

}  // namespace protoscale
