#include "protoscale/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace protoscale {

namespace {

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

struct Template {
  const char* name;
  std::size_t parts;
};

constexpr Template kTemplates[] = {{"ball", 1}, {"snowman", 2}, {"house", 2}, {"cart", 3}};

Part circle(double cx, double cy, double r, SemanticClass c) {
  Part p;
  p.kind = ShapeKind::Circle;
  p.geometry = {cx, cy, r, 0, 0, 0};
  p.label = c;
  return p;
}

Part rect(double x0, double y0, double x1, double y1, SemanticClass c) {
  Part p;
  p.kind = ShapeKind::Rect;
  p.geometry = {x0, y0, x1, y1, 0, 0};
  p.label = c;
  return p;
}

Part triangle(double ax, double ay, double bx, double by, double cx, double cy, SemanticClass c) {
  Part p;
  p.kind = ShapeKind::Triangle;
  p.geometry = {ax, ay, bx, by, cx, cy};
  p.label = c;
  return p;
}

// Parts of a template centred at the origin with unit size u.
std::vector<Part> build_parts(const std::string& kind, double u) {
  if (kind == "ball") return {circle(0, 0, u, SemanticClass::Ball)};
  if (kind == "snowman") {
    return {circle(0, 0.6 * u, u, SemanticClass::Snow), circle(0, -0.95 * u, 0.65 * u, SemanticClass::Snow)};
  }
  if (kind == "house") {
    return {rect(-u, -0.1 * u, u, u, SemanticClass::Wall),
            triangle(-1.25 * u, -0.1 * u, 1.25 * u, -0.1 * u, 0, -1.3 * u, SemanticClass::Roof)};
  }
  return {rect(-1.3 * u, -0.7 * u, 1.3 * u, 0.3 * u, SemanticClass::CartBody),
          circle(-0.7 * u, 0.45 * u, 0.45 * u, SemanticClass::Wheel),
          circle(0.7 * u, 0.45 * u, 0.45 * u, SemanticClass::Wheel)};
}

struct Box {
  double x0, y0, x1, y1;
};

Box bounds(const std::vector<Part>& parts) {
  Box b{1e300, 1e300, -1e300, -1e300};
  for (const auto& p : parts) {
    const auto& g = p.geometry;
    switch (p.kind) {
      case ShapeKind::Circle:
        b = {std::min(b.x0, g[0] - g[2]), std::min(b.y0, g[1] - g[2]), std::max(b.x1, g[0] + g[2]),
             std::max(b.y1, g[1] + g[2])};
        break;
      case ShapeKind::Rect:
        b = {std::min(b.x0, g[0]), std::min(b.y0, g[1]), std::max(b.x1, g[2]), std::max(b.y1, g[3])};
        break;
      case ShapeKind::Triangle:
        for (int k = 0; k < 3; ++k) {
          b = {std::min(b.x0, g[2 * k]), std::min(b.y0, g[2 * k + 1]), std::max(b.x1, g[2 * k]),
               std::max(b.y1, g[2 * k + 1])};
        }
        break;
    }
  }
  return b;
}

void translate(std::vector<Part>& parts, double dx, double dy) {
  for (auto& p : parts) {
    auto& g = p.geometry;
    switch (p.kind) {
      case ShapeKind::Circle:
        g[0] += dx;
        g[1] += dy;
        break;
      case ShapeKind::Rect:
      case ShapeKind::Triangle:
        for (int k = 0; k < (p.kind == ShapeKind::Rect ? 2 : 3); ++k) {
          g[2 * k] += dx;
          g[2 * k + 1] += dy;
        }
        break;
    }
  }
}

// Instance id per pixel when drawing objects in order (later on top).
std::vector<std::uint16_t> rasterize(const std::vector<PlacedObject>& objects, std::size_t s) {
  std::vector<std::uint16_t> ids(s * s, 0);
  std::uint16_t next = 0;
  for (const auto& obj : objects) {
    for (const auto& part : obj.parts) {
      ++next;
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          if (part.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) ids[y * s + x] = next;
    }
  }
  return ids;
}

std::vector<std::size_t> visible_areas(const std::vector<std::uint16_t>& ids, std::size_t instances) {
  std::vector<std::size_t> area(instances + 1, 0);
  for (auto id : ids) ++area[id];
  return area;
}

constexpr std::size_t kMinPartPixels = 6;

// One attempt at a full scene; false when some object could not be placed.
bool try_layout(const SceneConfig& cfg, Rng& rng, std::vector<PlacedObject>& objects) {
  objects.clear();
  const std::size_t s = cfg.size;
  const double unit_scale = static_cast<double>(s) / 64.0;
  const auto count = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(cfg.min_objects), static_cast<std::int64_t>(cfg.max_objects)));
  std::size_t used = 0;
  std::vector<std::size_t> own_area;  // visible area of each instance right after placement

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t budget = cfg.max_instances - used - (count - i - 1);
    std::vector<const Template*> allowed;
    for (const auto& t : kTemplates)
      if (t.parts <= budget) allowed.push_back(&t);
    if (allowed.empty()) return false;
    const Template& tpl = *allowed[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(allowed.size()) - 1))];

    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      PlacedObject obj;
      obj.kind = tpl.name;
      obj.unit = rng.uniform(5.0, 9.0) * unit_scale;
      obj.parts = build_parts(obj.kind, obj.unit);
      const Box b = bounds(obj.parts);
      const double lo_x = 1.0 - b.x0, hi_x = static_cast<double>(s) - 1.0 - b.x1;
      const double lo_y = 1.0 - b.y0, hi_y = static_cast<double>(s) - 1.0 - b.y1;
      if (lo_x > hi_x || lo_y > hi_y) continue;
      obj.cx = rng.uniform(lo_x, hi_x);
      obj.cy = rng.uniform(lo_y, hi_y);
      translate(obj.parts, obj.cx, obj.cy);
      for (auto& part : obj.parts) {
        const auto base = class_color(part.label);
        for (std::size_t c = 0; c < 3; ++c) part.color[c] = std::clamp(base[c] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
      }

      objects.push_back(obj);
      const auto area = visible_areas(rasterize(objects, s), used + obj.parts.size());
      bool ok = true;
      for (std::size_t k = 0; k < used && ok; ++k) {
        ok = static_cast<double>(area[k + 1]) >= (1.0 - cfg.max_occlusion) * static_cast<double>(own_area[k]);
      }
      for (std::size_t k = used; k < used + obj.parts.size() && ok; ++k) ok = area[k + 1] >= kMinPartPixels;
      if (!ok) {
        objects.pop_back();
        continue;
      }
      for (std::size_t k = used; k < used + obj.parts.size(); ++k) own_area.push_back(area[k + 1]);
      used += obj.parts.size();
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

}  // namespace

void SceneConfig::validate() const {
  if (size < 16) throw ParameterError("scene size must be at least 16");
  if (min_objects > max_objects) throw ParameterError("min_objects exceeds max_objects");
  if (max_objects > max_instances) throw ParameterError("max_instances must allow one part per object");
  if (max_instances > 250) throw ParameterError("too many instances for 8-bit maps");
  if (!(max_occlusion >= 0.0 && max_occlusion < 1.0)) throw ParameterError("max_occlusion must lie in [0, 1)");
  if (!(noise >= 0.0)) throw ParameterError("noise must be nonnegative");
  if (max_attempts == 0) throw ParameterError("max_attempts must be positive");
}

bool Part::contains(double x, double y) const {
  const auto& g = geometry;
  switch (kind) {
    case ShapeKind::Circle:
      return (x - g[0]) * (x - g[0]) + (y - g[1]) * (y - g[1]) <= g[2] * g[2];
    case ShapeKind::Rect:
      return x >= g[0] && x <= g[2] && y >= g[1] && y <= g[3];
    case ShapeKind::Triangle: {
      const double d1 = edge(g[0], g[1], g[2], g[3], x, y);
      const double d2 = edge(g[2], g[3], g[4], g[5], x, y);
      const double d3 = edge(g[4], g[5], g[0], g[1], x, y);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
  }
  return false;
}

std::array<double, 3> class_color(SemanticClass c) {
  switch (c) {
    case SemanticClass::Background: return {0.32, 0.52, 0.30};
    case SemanticClass::Snow: return {0.93, 0.93, 0.96};
    case SemanticClass::CartBody: return {0.85, 0.15, 0.12};
    case SemanticClass::Wheel: return {0.12, 0.12, 0.15};
    case SemanticClass::Wall: return {0.92, 0.80, 0.20};
    case SemanticClass::Roof: return {0.55, 0.20, 0.62};
    case SemanticClass::Ball: return {0.15, 0.35, 0.90};
  }
  return {0, 0, 0};
}

std::size_t Scene::instance_count() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.parts.size();
  return n;
}

bool Scene::has_composite() const {
  for (const auto& o : objects)
    if (o.parts.size() > 1) return true;
  return false;
}

Scene generate_scene(const SceneConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t s = cfg.size;
  Scene scene;
  constexpr int kMaxRestarts = 10000;
  int restarts = 0;
  while (!try_layout(cfg, rng, scene.objects)) {
    if (++restarts > kMaxRestarts) throw std::runtime_error("scene layout did not converge");
  }

  scene.image = Image(3, s, s);
  scene.semantic = LabelMap(s, s);
  scene.instance = LabelMap(s, s);
  scene.group = LabelMap(s, s);

  const auto bg = class_color(SemanticClass::Background);
  const double fx = rng.uniform(0.1, 0.4), fy = rng.uniform(0.1, 0.4), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double wave = 0.05 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (std::size_t c = 0; c < 3; ++c) scene.image.at(c, y, x) = bg[c] + wave + rng.normal(0.0, 0.03);
    }

  std::uint8_t inst = 0, grp = 0;
  for (const auto& obj : scene.objects) {
    ++grp;
    for (const auto& part : obj.parts) {
      ++inst;
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          if (!part.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
          scene.semantic.at(y, x) = static_cast<std::uint8_t>(part.label);
          scene.instance.at(y, x) = inst;
          scene.group.at(y, x) = grp;
          for (std::size_t c = 0; c < 3; ++c) scene.image.at(c, y, x) = part.color[c] + rng.normal(0.0, cfg.noise);
        }
    }
  }
  for (auto& v : scene.image.pixels) v = std::clamp(v, 0.0, 1.0);
  return scene;
}

Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Scene scene = generate_scene(cfg, rng);
  scene.seed = seed;
  return scene;
}

std::uint64_t scene_seed(std::uint64_t master_seed, std::size_t index) {
  return Rng::derive(master_seed, {static_cast<std::uint64_t>(index)}).next_u64();
}

std::vector<std::size_t> Manifest::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["catalog_version"] = m.catalog_version;
  j["count"] = m.entries.size();
  j["size"] = m.size;
  j["master_seed"] = m.master_seed;
  j["validation_fraction"] = m.validation_fraction;
  j["scenes"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json s;
    s["id"] = e.id;
    s["seed"] = e.seed;
    s["split"] = e.split;
    s["image"] = e.image;
    s["semantic"] = e.semantic;
    s["instance"] = e.instance;
    s["group"] = e.group;
    s["objects"] = e.objects;
    j["scenes"].push_back(std::move(s));
  }
  return j.dump(2) + "\n";
}

Manifest write_dataset(std::size_t n, const SceneConfig& cfg, std::uint64_t master_seed,
                       const std::filesystem::path& out_dir, double validation_fraction) {
  cfg.validate();
  if (!(validation_fraction >= 0.0 && validation_fraction <= 1.0)) {
    throw ParameterError("validation_fraction must lie in [0, 1]");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "scenes", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "scenes").string() + ": " + ec.message());

  Manifest m;
  m.size = cfg.size;
  m.master_seed = master_seed;
  m.validation_fraction = validation_fraction;
  const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * validation_fraction));
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.id = i;
    e.seed = scene_seed(master_seed, i);
    e.split = i + n_val >= n ? "val" : "train";
    char stem[48];
    std::snprintf(stem, sizeof stem, "scenes/scene_%05zu", i);
    e.image = std::string(stem) + ".ppm";
    e.semantic = std::string(stem) + "_semantic.pgm";
    e.instance = std::string(stem) + "_instance.pgm";
    e.group = std::string(stem) + "_group.pgm";

    const Scene scene = generate_scene(cfg, e.seed);
    for (const auto& o : scene.objects) e.objects.push_back(o.kind);
    write_ppm(out_dir / e.image, scene.image);
    write_pgm(out_dir / e.semantic, scene.semantic);
    write_pgm(out_dir / e.instance, scene.instance);
    write_pgm(out_dir / e.group, scene.group);
    m.entries.push_back(std::move(e));
  }

  const auto path = out_dir / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << manifest_to_json(m);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
  return m;
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Manifest m;
    m.catalog_version = j.at("catalog_version").get<std::string>();
    m.size = j.at("size").get<std::size_t>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.validation_fraction = j.at("validation_fraction").get<double>();
    for (const auto& s : j.at("scenes")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::size_t>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.split = s.at("split").get<std::string>();
      e.image = s.at("image").get<std::string>();
      e.semantic = s.at("semantic").get<std::string>();
      e.instance = s.at("instance").get<std::string>();
      e.group = s.at("group").get<std::string>();
      e.objects = s.at("objects").get<std::vector<std::string>>();
      m.entries.push_back(std::move(e));
    }
    if (m.entries.size() != j.at("count").get<std::size_t>()) throw IoError(path.string() + ": count mismatch");
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(path.string() + ": malformed manifest (" + ex.what() + ")");
  }
}

Scene load_scene(const std::filesystem::path& dir, const ManifestEntry& entry) {
  Scene scene;
  scene.seed = entry.seed;
  scene.image = read_ppm(dir / entry.image);
  scene.semantic = read_pgm(dir / entry.semantic);
  scene.instance = read_pgm(dir / entry.instance);
  scene.group = read_pgm(dir / entry.group);
  for (const auto& kind : entry.objects) {
    PlacedObject o;
    o.kind = kind;
    o.parts.resize(kind == "ball" ? 1 : kind == "cart" ? 3 : 2);
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

}  // namespace protoscale
