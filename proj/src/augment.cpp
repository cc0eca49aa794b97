#include "protoscale/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace protoscale {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError(std::string(name) + " must lie in [0, 1]");
  };
  prob(crop_probability, "crop_probability");
  prob(zoom_probability, "zoom_probability");
  prob(flip_probability, "flip_probability");
  prob(photometric_probability, "photometric_probability");
  prob(mask_max_fraction, "mask_max_fraction");
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0)) {
    throw ParameterError("crop area range must satisfy 0 < min <= max <= 1");
  }
  if (!(zoom_max >= 1.0)) throw ParameterError("zoom_max must be >= 1");
  if (!(photometric_strength >= 0.0 && photometric_strength < 1.0)) throw ParameterError("photometric_strength in [0, 1)");
  if (views == 0) throw ParameterError("need at least one student view");
  if (!(blur_sigma_min >= 0.0 && blur_sigma_min <= blur_sigma_max)) throw ParameterError("blur sigma range invalid");
  if (mask_rects_min > mask_rects_max) throw ParameterError("mask rect range invalid");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ParameterError("jitter must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Geometry

Image warp_image(const Image& image, const AffineMap& map, const std::vector<double>& fill) {
  if (map.is_identity()) return image;
  const std::size_t h = image.height, w = image.width;
  Image out(image.channels, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = map.scale_y * (static_cast<double>(y) + 0.5) + map.offset_y;
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = map.scale_x * (static_cast<double>(x) + 0.5) + map.offset_x;
      const bool inside = sx >= 0.0 && sy >= 0.0 && sx <= static_cast<double>(w) && sy <= static_cast<double>(h);
      if (!inside) {
        for (std::size_t c = 0; c < image.channels; ++c) out.at(c, y, x) = fill[c];
        continue;
      }
      const double px = std::clamp(sx - 0.5, 0.0, static_cast<double>(w - 1));
      const double py = std::clamp(sy - 0.5, 0.0, static_cast<double>(h - 1));
      const std::size_t x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1);
        const double bottom = (1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1);
        out.at(c, y, x) = (1 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

LabelMap warp_labels(const LabelMap& labels, const AffineMap& map) {
  if (map.is_identity()) return labels;
  LabelMap out(labels.height, labels.width);
  for (std::size_t y = 0; y < labels.height; ++y) {
    const double sy = map.scale_y * (static_cast<double>(y) + 0.5) + map.offset_y;
    for (std::size_t x = 0; x < labels.width; ++x) {
      const double sx = map.scale_x * (static_cast<double>(x) + 0.5) + map.offset_x;
      if (sx < 0.0 || sy < 0.0 || sx >= static_cast<double>(labels.width) || sy >= static_cast<double>(labels.height))
        continue;
      out.at(y, x) = labels.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  }
  return out;
}

Image hflip(const Image& image) {
  Image out(image.channels, image.height, image.width);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  if (sigma <= 0.0 || radius == 0) return image;
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += taps[i + radius];
  }
  for (auto& t : taps) t /= total;
  const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
  Image tmp(image.channels, image.height, image.width), out(image.channels, image.height, image.width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0.0;
        for (long k = -radius; k <= radius; ++k) s += taps[k + radius] * image.at(c, y, std::clamp(x + k, 0L, w - 1));
        tmp.at(c, y, x) = s;
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0.0;
        for (long k = -radius; k <= radius; ++k) s += taps[k + radius] * tmp.at(c, std::clamp(y + k, 0L, h - 1), x);
        out.at(c, y, x) = s;
      }
  }
  return out;
}

namespace {

void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Teacher

TeacherPlan sample_teacher_plan(std::size_t size, const AugmentConfig& cfg, Rng& rng) {
  const double s = static_cast<double>(size);
  double crop_scale = 1.0, crop_x = 0.0, crop_y = 0.0;
  if (rng.bernoulli(cfg.crop_probability)) {
    crop_scale = std::sqrt(rng.uniform(cfg.crop_area_min, cfg.crop_area_max));
    const double side = crop_scale * s;
    crop_x = rng.uniform(0.0, s - side);
    crop_y = rng.uniform(0.0, s - side);
  }
  double zoom = 1.0, pad_x = 0.0, pad_y = 0.0;
  if (rng.bernoulli(cfg.zoom_probability)) {
    zoom = rng.uniform(1.0, cfg.zoom_max);
    pad_x = rng.uniform(0.0, (zoom - 1.0) * s);
    pad_y = rng.uniform(0.0, (zoom - 1.0) * s);
  }
  const bool flip = rng.bernoulli(cfg.flip_probability);

  TeacherPlan plan;
  // final d -> (flip) -> zoom canvas d*zoom -> crop frame (- pad) -> source (crop_x + crop_scale * u)
  const double k = crop_scale * zoom;
  plan.geometry.scale_x = flip ? -k : k;
  plan.geometry.offset_x = crop_x - crop_scale * pad_x + (flip ? k * s : 0.0);
  plan.geometry.scale_y = k;
  plan.geometry.offset_y = crop_y - crop_scale * pad_y;

  if (rng.bernoulli(cfg.photometric_probability)) {
    const double a = cfg.photometric_strength;
    plan.photometric = true;
    plan.brightness = rng.uniform(-a, a);
    plan.contrast = rng.uniform(1.0 - a, 1.0 + a);
    plan.saturation = rng.uniform(1.0 - a, 1.0 + a);
  }
  return plan;
}

Image apply_teacher_plan(const Image& image, const TeacherPlan& plan) {
  Image out = warp_image(image, plan.geometry, image.channel_means());
  if (!plan.photometric) return out;
  const std::size_t plane = out.height * out.width;
  for (auto& v : out.pixels) v += plan.brightness;
  double gray_mean = 0.0;
  for (auto v : out.pixels) gray_mean += v;
  gray_mean /= static_cast<double>(out.pixels.size());
  for (auto& v : out.pixels) v = gray_mean + plan.contrast * (v - gray_mean);
  if (out.channels == 3) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double gray = 0.299 * out.pixels[i] + 0.587 * out.pixels[plane + i] + 0.114 * out.pixels[2 * plane + i];
      for (std::size_t c = 0; c < 3; ++c) out.pixels[c * plane + i] = gray + plan.saturation * (out.pixels[c * plane + i] - gray);
    }
  }
  clamp_unit(out);
  return out;
}

Image teacher_augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  return apply_teacher_plan(image, sample_teacher_plan(image.width, cfg, rng));
}

// ---------------------------------------------------------------------------
// Student

StudentViewPlan sample_student_plan(std::size_t size, const AugmentConfig& cfg, Rng& rng) {
  StudentViewPlan plan;
  if (cfg.blur_sigma_max > 0.0) plan.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  if (cfg.jitter > 0.0) {
    plan.brightness = rng.uniform(-cfg.jitter, cfg.jitter);
    plan.contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  }
  const std::size_t budget_total = static_cast<std::size_t>(std::floor(cfg.mask_max_fraction * static_cast<double>(size * size)));
  if (budget_total > 0 && cfg.mask_rects_max > 0) {
    const std::size_t count = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.mask_rects_min), static_cast<std::int64_t>(cfg.mask_rects_max)));
    std::size_t remaining = budget_total;
    for (std::size_t r = 0; r < count && remaining > 0; ++r) {
      const double share = static_cast<double>(remaining) / static_cast<double>(count - r);
      const double area = rng.uniform(0.25, 1.0) * share;
      const double aspect = rng.uniform(0.5, 2.0);
      std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1, size);
      std::size_t h = std::clamp<std::size_t>(static_cast<std::size_t>(area / static_cast<double>(w)), 1, size);
      while (w * h > remaining && h > 1) --h;
      while (w * h > remaining && w > 1) --w;
      if (w * h > remaining) break;
      Rect rect;
      rect.w = w;
      rect.h = h;
      rect.x = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(size - w)));
      rect.y = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(size - h)));
      plan.masks.push_back(rect);
      remaining -= rect.area();
    }
  }
  return plan;
}

Image apply_student_plan(const Image& teacher_view, const StudentViewPlan& plan) {
  Image out = warp_image(teacher_view, plan.geometry, teacher_view.channel_means());
  out = gaussian_blur(out, plan.blur_sigma);
  if (plan.brightness != 0.0 || plan.contrast != 1.0) {
    const auto means = out.channel_means();
    const std::size_t plane = out.height * out.width;
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = out.pixels[c * plane + i];
        v = means[c] + plan.contrast * (v - means[c]) + plan.brightness;
      }
  }
  if (!plan.masks.empty()) {
    const auto fill = teacher_view.channel_means();
    for (const auto& r : plan.masks)
      for (std::size_t c = 0; c < out.channels; ++c)
        for (std::size_t y = r.y; y < r.y + r.h; ++y)
          for (std::size_t x = r.x; x < r.x + r.w; ++x) out.at(c, y, x) = fill[c];
  }
  clamp_unit(out);
  return out;
}

ViewBatch student_augment(const Image& teacher_view, const AugmentConfig& cfg, Rng& rng) {
  ViewBatch batch;
  batch.teacher_view = teacher_view;
  for (std::size_t v = 0; v < cfg.views; ++v) {
    StudentViewPlan plan = sample_student_plan(teacher_view.width, cfg, rng);
    batch.student_views.push_back(apply_student_plan(teacher_view, plan));
    batch.mask_records.push_back(plan.masks);
  }
  return batch;
}

ViewBatch make_view_batch(const Image& image, const AugmentConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Image teacher = teacher_augment(image, cfg, rng);
  ViewBatch batch = student_augment(teacher, cfg, rng);
  batch.rng_seed = seed;
  return batch;
}

}  // namespace protoscale
