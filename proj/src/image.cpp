#include "cpnkit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cpnkit {

namespace {

Image from_rgb8(const std::vector<unsigned char>& bytes, Index height, Index width) {
  Image out({3, height, width});
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<float>(bytes[static_cast<std::size_t>((y * width + x) * 3 + c)]) / 255.0f;
    }
  }
  return out;
}

std::vector<unsigned char> to_rgb8(const Image& image) {
  if (image.rank() != 3 || image.channels() != 3) {
    throw std::invalid_argument("image writer: expected 3 x H x W, got " + shape_string(image.shape()));
  }
  const Index h = image.height(), w = image.width();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
        bytes[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  return bytes;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("read_image: " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("read_image: " + path.string() + ": " + msg);
  }
  return from_rgb8(bytes, png.height, png.width);
}

void skip_ppm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_image: " + path.string() + " is not a binary PPM (P6)");
  Index width = 0, height = 0;
  int maxval = 0;
  skip_ppm_space(in);
  in >> width;
  skip_ppm_space(in);
  in >> height;
  skip_ppm_space(in);
  in >> maxval;
  in.get();
  if (!in || width <= 0 || height <= 0 || maxval != 255) {
    throw std::runtime_error("read_image: unsupported PPM header in " + path.string());
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width * height * 3));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("read_image: truncated PPM " + path.string());
  return from_rgb8(bytes, height, width);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("read_image: cannot open " + path.string());
  char head[2] = {};
  probe.read(head, 2);
  if (head[0] == 'P' && head[1] == '6') return read_ppm(path);
  return read_png(path);
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const std::vector<unsigned char> bytes = to_rgb8(image);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("write_png: " + path.string() + ": " + png.message);
  }
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  const std::vector<unsigned char> bytes = to_rgb8(image);
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_ppm: cannot write " + path.string());
}

std::vector<std::pair<Index, Index>> segment_pixels(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                                    double half_width, Index height, Index width) {
  std::vector<std::pair<Index, Index>> out;
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(a.x(), b.x()) - half_width)));
  const Index x1 = std::min<Index>(width - 1, static_cast<Index>(std::ceil(std::max(a.x(), b.x()) + half_width)));
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(a.y(), b.y()) - half_width)));
  const Index y1 = std::min<Index>(height - 1, static_cast<Index>(std::ceil(std::max(a.y(), b.y()) + half_width)));
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  for (Index y = y0; y <= y1; ++y) {
    for (Index x = x0; x <= x1; ++x) {
      const Eigen::Vector2d p(static_cast<double>(x), static_cast<double>(y));
      const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      if ((a + t * ab - p).squaredNorm() <= half_width * half_width) out.emplace_back(x, y);
    }
  }
  return out;
}

std::vector<std::pair<Index, Index>> disk_pixels(const Eigen::Vector2d& center, double radius, Index height,
                                                 Index width) {
  return segment_pixels(center, center, radius, height, width);
}

void paint(Image& image, const std::vector<std::pair<Index, Index>>& pixels, const Rgb& color) {
  for (const auto& [x, y] : pixels) {
    for (Index c = 0; c < 3; ++c) image.at(0, c, y, x) = color[static_cast<std::size_t>(c)];
  }
}

Image normalize_pixels(const Image& image) {
  Image out(image.shape());
  out.data() = (image.data() - kPixelMean) / kPixelStd;
  return out;
}

}  // namespace cpnkit
