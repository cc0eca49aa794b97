#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "protoscale/image.hpp"
#include "protoscale/rng.hpp"

// Asymmetric view generation. The teacher gets one globally augmented view
// (crop, zoom-out, flip, photometric). Student views are derived from the
// teacher view with appearance-only transforms (blur, rectangular masking,
// colour jitter), so every student view stays pixel-aligned with it.
namespace protoscale {

struct AugmentConfig {
  // teacher
  double crop_probability = 0.5;
  double crop_area_min = 0.5;
  double crop_area_max = 1.0;
  double zoom_probability = 0.3;
  double zoom_max = 1.5;
  double flip_probability = 0.5;
  double photometric_probability = 0.8;
  double photometric_strength = 0.2;
  // student
  std::size_t views = 4;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.5;
  std::size_t mask_rects_min = 1;
  std::size_t mask_rects_max = 3;
  double mask_max_fraction = 0.25;
  double jitter = 0.3;

  void validate() const;
};

/// Destination-to-source pixel mapping: a destination pixel centre (x, y)
/// samples the source at (scale_x * x + offset_x, scale_y * y + offset_y),
/// all in continuous pixel-centre coordinates.
struct AffineMap {
  double scale_x = 1, offset_x = 0, scale_y = 1, offset_y = 0;
  bool is_identity() const { return scale_x == 1 && scale_y == 1 && offset_x == 0 && offset_y == 0; }
};

struct Rect {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  std::size_t area() const { return w * h; }
};

/// Sampled appearance parameters of one student view.
struct StudentViewPlan {
  double blur_sigma = 0;
  double brightness = 0;
  double contrast = 1;
  std::vector<Rect> masks;
  AffineMap geometry;  // always identity
};

struct TeacherPlan {
  AffineMap geometry;
  bool photometric = false;
  double brightness = 0, contrast = 1, saturation = 1;
};

struct ViewBatch {
  Image teacher_view;
  std::vector<Image> student_views;
  std::vector<std::vector<Rect>> mask_records;
  std::uint64_t rng_seed = 0;
};

TeacherPlan sample_teacher_plan(std::size_t size, const AugmentConfig& cfg, Rng& rng);
Image apply_teacher_plan(const Image& image, const TeacherPlan& plan);
Image teacher_augment(const Image& image, const AugmentConfig& cfg, Rng& rng);

StudentViewPlan sample_student_plan(std::size_t size, const AugmentConfig& cfg, Rng& rng);
Image apply_student_plan(const Image& teacher_view, const StudentViewPlan& plan);
/// cfg.views appearance-only views plus their mask records.
ViewBatch student_augment(const Image& teacher_view, const AugmentConfig& cfg, Rng& rng);

/// Full teacher + student pipeline from (image, seed).
ViewBatch make_view_batch(const Image& image, const AugmentConfig& cfg, std::uint64_t seed);

// Geometry stage, shared by images (bilinear) and label maps (nearest).
Image warp_image(const Image& image, const AffineMap& map, const std::vector<double>& fill);
LabelMap warp_labels(const LabelMap& labels, const AffineMap& map);

Image hflip(const Image& image);
Image gaussian_blur(const Image& image, double sigma);

}  // namespace protoscale
