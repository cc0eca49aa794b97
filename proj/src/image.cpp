#include "protoscale/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace protoscale {

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("image tensor must be [C, H, W], got " + shape_str(t.shape()));
  Image img(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.data().begin(), t.data().end(), img.pixels.begin());
  return img;
}

std::vector<double> Image::channel_means() const {
  std::vector<double> m(channels, 0.0);
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += pixels[c * plane + i];
    m[c] = plane ? s / static_cast<double>(plane) : 0.0;
  }
  return m;
}

Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw DimensionError("cannot stack zero images");
  const Image& first = images.front();
  std::vector<double> data;
  data.reserve(images.size() * first.pixels.size());
  for (const auto& img : images) {
    if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
      throw DimensionError("stack_images: mismatched image sizes");
    }
    data.insert(data.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor({images.size(), first.channels, first.height, first.width}, std::move(data));
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads "<magic> <w> <h> <maxval>" and the single whitespace byte after it.
void read_header(std::ifstream& in, const std::filesystem::path& path, const char* magic, std::size_t& w,
                 std::size_t& h) {
  std::string tag;
  int maxval = 0;
  in >> tag;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  in.get();
  if (!in || tag != magic || maxval != 255) {
    throw IoError(path.string() + ": not an 8-bit " + magic + " file");
  }
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw DimensionError("PPM needs 3 channels");
  auto out = open_out(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> bytes(image.height * image.width * 3);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        bytes[(y * image.width + x) * 3 + c] = static_cast<char>(to_byte(image.at(c, y, x)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  finish(out, path);
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::size_t w = 0, h = 0;
  read_header(in, path, "P6", w, h);
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError(path.string() + ": truncated pixel data");
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
  return img;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& map) {
  auto out = open_out(path);
  out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.ids.data()), static_cast<std::streamsize>(map.ids.size()));
  finish(out, path);
}

LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::size_t w = 0, h = 0;
  read_header(in, path, "P5", w, h);
  LabelMap map(h, w);
  in.read(reinterpret_cast<char*>(map.ids.data()), static_cast<std::streamsize>(map.ids.size()));
  if (!in) throw IoError(path.string() + ": truncated pixel data");
  return map;
}

}  // namespace protoscale
