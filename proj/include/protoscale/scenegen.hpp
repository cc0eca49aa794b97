#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoscale/image.hpp"
#include "protoscale/rng.hpp"

// Procedural scenes of composite shapes with exact semantic, instance and
// group (whole-object) ground truth.
namespace protoscale {

inline constexpr const char* kCatalogVersion = "shapes-v1";

enum class SemanticClass : std::uint8_t { Background = 0, Snow = 1, CartBody = 2, Wheel = 3, Wall = 4, Roof = 5, Ball = 6 };
inline constexpr std::size_t kSemanticClasses = 7;

enum class ShapeKind { Circle, Rect, Triangle };

struct Part {
  ShapeKind kind = ShapeKind::Circle;
  // circle: cx, cy, r; rect: x0, y0, x1, y1; triangle: three vertices
  std::array<double, 6> geometry{};
  SemanticClass label = SemanticClass::Background;
  std::array<double, 3> color{};
  bool contains(double x, double y) const;
};

struct PlacedObject {
  std::string kind;  // "ball", "snowman", "house", "cart"
  double cx = 0, cy = 0, unit = 0;
  std::vector<Part> parts;
};

struct SceneConfig {
  std::size_t size = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t max_instances = 6;
  double max_occlusion = 0.3;
  double noise = 0.02;
  std::size_t max_attempts = 100;

  void validate() const;
};

struct Scene {
  Image image;
  LabelMap semantic;
  LabelMap instance;  // 1..n, one id per part
  LabelMap group;     // 1..k, one id per object
  std::vector<PlacedObject> objects;
  std::uint64_t seed = 0;

  std::size_t instance_count() const;
  bool has_composite() const;
};

/// Base colour of a class (background colour for Background).
std::array<double, 3> class_color(SemanticClass c);

Scene generate_scene(const SceneConfig& cfg, Rng& rng);
/// Scene for one seed; the same seed always yields the same scene.
Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed);

struct ManifestEntry {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "val"
  std::string image, semantic, instance, group;
  std::vector<std::string> objects;
};

struct Manifest {
  std::string catalog_version = kCatalogVersion;
  std::size_t size = 64;
  std::uint64_t master_seed = 0;
  double validation_fraction = 0.125;
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

/// Per-scene seed derived from the master seed by counter.
std::uint64_t scene_seed(std::uint64_t master_seed, std::size_t index);

/// Writes n scenes plus manifest.json into out_dir. The last
/// round(n * validation_fraction) scenes form the validation split.
Manifest write_dataset(std::size_t n, const SceneConfig& cfg, std::uint64_t master_seed,
                       const std::filesystem::path& out_dir, double validation_fraction = 0.125);

std::string manifest_to_json(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);
/// Image and maps of one entry; object geometry is not stored on disk.
Scene load_scene(const std::filesystem::path& dir, const ManifestEntry& entry);

}  // namespace protoscale
