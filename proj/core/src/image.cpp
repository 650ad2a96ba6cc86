#include "ctxgan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "ctxgan/errors.hpp"

namespace ctxgan {

float u8_to_unit(std::uint8_t u) {
  return 2.0f * (static_cast<float>(u) / 255.0f) - 1.0f;
}

std::uint8_t unit_to_u8(float v) {
  const double scaled = std::round((static_cast<double>(v) + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png decode: ") + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&img, &white, raw.data(), 0, nullptr)) {
    const std::string message = img.message;
    png_image_free(&img);
    throw FormatError("png decode: " + message);
  }
  Image out(img.height, img.width, color ? 3 : 1);
  std::transform(raw.begin(), raw.end(), out.pixels.begin(), u8_to_unit);
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DimensionError("png encode supports 1 or 3 channels, got " +
                         std::to_string(image.channels));
  }
  std::vector<std::uint8_t> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), unit_to_u8);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > image.height || left + w > image.width) {
    throw DimensionError("crop window exceeds the image");
  }
  Image out(h, w, image.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const float* src = &image.pixels[((top + y) * image.width + left) * image.channels];
    std::copy(src, src + w * image.channels, &out.pixels[y * w * image.channels]);
  }
  return out;
}

Image center_crop_square(const Image& image) {
  const std::size_t side = std::min(image.height, image.width);
  return crop(image, (image.height - side) / 2, (image.width - side) / 2, side, side);
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c)
        out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
  return out;
}

namespace {

// Weights mapping `in` source samples to `out` destination samples along one
// axis: area coverage when shrinking, linear interpolation when enlarging.
struct Tap {
  std::size_t index;
  double weight;
};

std::vector<std::vector<Tap>> axis_taps(std::size_t in, std::size_t out) {
  std::vector<std::vector<Tap>> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (scale >= 1.0) {
      const double lo = o * scale;
      const double hi = lo + scale;
      for (auto i = static_cast<std::size_t>(lo); i < in && static_cast<double>(i) < hi; ++i) {
        const double cover = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (cover > 0) taps[o].push_back({i, cover / scale});
      }
    } else {
      const double center = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(center));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      const double t = center - static_cast<double>(i0);
      taps[o].push_back({i0, 1.0 - t});
      if (i1 != i0) taps[o].push_back({i1, t});
    }
  }
  return taps;
}

}  // namespace

Image resize(const Image& image, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || image.empty()) throw DimensionError("resize to or from an empty image");
  if (h == image.height && w == image.width) return image;
  const auto rows = axis_taps(image.height, h);
  const auto cols = axis_taps(image.width, w);
  const std::size_t c = image.channels;
  Image tmp(image.height, w, c);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (const Tap& t : cols[x]) acc += t.weight * image.at(y, t.index, ch);
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }
  Image out(h, w, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (const Tap& t : rows[y]) acc += t.weight * tmp.at(t.index, x, ch);
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  return out;
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw DimensionError("to_rgb expects 1 or 3 channels");
  Image out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = image.pixels[i];
  }
  return out;
}

Image to_gray(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw DimensionError("to_gray expects 1 or 3 channels");
  Image out(image.height, image.width, 1);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    const float r = image.pixels[3 * i], g = image.pixels[3 * i + 1], b = image.pixels[3 * i + 2];
    out.pixels[i] = (r == g && g == b) ? r : 0.299f * r + 0.587f * g + 0.114f * b;
  }
  return out;
}

Image hconcat(std::span<const Image> images) {
  if (images.empty()) return {};
  const std::size_t h = images.front().height, c = images.front().channels;
  std::size_t w = 0;
  for (const Image& im : images) {
    if (im.height != h || im.channels != c) throw DimensionError("hconcat: mismatched images");
    w += im.width;
  }
  Image out(h, w, c);
  std::size_t offset = 0;
  for (const Image& im : images) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy(&im.pixels[y * im.width * c], &im.pixels[(y + 1) * im.width * c],
                &out.pixels[(y * w + offset) * c]);
    }
    offset += im.width;
  }
  return out;
}

Tensor<float> to_tensor(const Image& image) {
  return Tensor<float>({1, image.height, image.width, image.channels}, image.pixels);
}

Image from_tensor(const Tensor<float>& t, std::size_t index) {
  std::size_t n = 1, h, w, c;
  if (t.rank() == 4) {
    n = t.dim(0), h = t.dim(1), w = t.dim(2), c = t.dim(3);
  } else if (t.rank() == 3) {
    h = t.dim(0), w = t.dim(1), c = t.dim(2);
  } else {
    throw DimensionError("from_tensor expects rank 3 or 4, got " + shape_string(t.shape()));
  }
  if (index >= n) throw DimensionError("from_tensor: batch index out of range");
  Image out(h, w, c);
  const auto data = t.data();
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(index * h * w * c),
            data.begin() + static_cast<std::ptrdiff_t>((index + 1) * h * w * c), out.pixels.begin());
  return out;
}

}  // namespace ctxgan
