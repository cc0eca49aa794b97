#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protoscale/image.hpp"
#include "protoscale/model.hpp"
#include "protoscale/scenegen.hpp"

namespace protoscale {

/// Row-major integer partition of an image.
struct LabelGrid {
  std::size_t height = 0, width = 0;
  std::vector<int> labels;

  LabelGrid() = default;
  LabelGrid(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), labels(h * w, fill) {}
  static LabelGrid from_map(const LabelMap& map);
  bool operator==(const LabelGrid&) const = default;
};

/// Per pixel, the row with the largest value (lowest index on ties), then
/// nearest-neighbour upsampled to target x target. attention is [N, h*w].
LabelGrid argmax_segmentation(const Tensor& attention, std::size_t h, std::size_t w, std::size_t target);

/// Pair-counting ARI over pixels where mask != 0. Returns 0 when the
/// expected index equals the maximum index. Throws on an empty mask.
double adjusted_rand_index(const LabelGrid& pred, const LabelGrid& truth, const std::vector<std::uint8_t>& mask);

/// Sum over predicted clusters of the majority truth count, over masked pixels.
double purity(const LabelGrid& pred, const LabelGrid& truth, const std::vector<std::uint8_t>& mask);

struct CollapseMetrics {
  std::vector<double> usage;  // sums to 1
  double entropy = 0;         // nats
  std::size_t active = 0;     // usage > 1 / (10 N)
};

/// Usage = mean attention mass per prototype over every pixel of every map.
/// Each map is [N, HW] or [B, N, HW].
CollapseMetrics collapse_metrics(const std::vector<Tensor>& maps);

struct ScaleMetrics {
  double semantic_purity = 0;
  double instance_ari = 0;
  double hierarchy_ari = 0;
  double composite_instance_ari = 0;  // instance ARI restricted to scenes with composite objects
  double usage_entropy = 0;
  std::size_t active_prototypes = 0;
};

struct MetricsReport {
  std::uint64_t step = 0;
  std::size_t n_scenes = 0;
  std::size_t n_composite = 0;
  // headline values: finest scale for partitions, mean over scales for usage
  double semantic_purity = 0;
  double instance_ari = 0;
  double hierarchy_ari = 0;
  double composite_instance_ari = 0;
  double prototype_usage_entropy = 0;
  std::array<ScaleMetrics, 3> per_scale{};

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Runs `net` without gradients over the scenes (in batches) and scores
/// argmax partitions against the ground truth. Instance and hierarchy ARI
/// use foreground pixels only; hierarchy ARI is scored against group ids on
/// scenes that contain a composite object.
MetricsReport evaluate(const Network& net, const std::vector<Scene>& scenes, std::size_t batch_size = 16);

/// Writes, per scale, one PGM per semantic, instance and hierarchical map plus
/// one overlay PPM. `scales` holds maps for a single image (batch 1).
/// Returns the number of files written.
std::size_t export_attention_images(const std::vector<ScaleAttention>& scales, const Image& image,
                                    const std::filesystem::path& out_dir);

/// Fixed 16-colour palette used by overlays.
std::array<double, 3> palette_color(std::size_t index);

/// Min-max normalised grey map; constant maps become mid-grey (128).
LabelMap normalized_map(std::span<const double> values, std::size_t h, std::size_t w);

}  // namespace protoscale
