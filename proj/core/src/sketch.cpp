#include "ctxgan/sketch.hpp"

#include <algorithm>
#include <cmath>

#include "ctxgan/errors.hpp"

namespace ctxgan {

void SketchStyle::validate() const {
  if (!(sigma > 0.0)) throw ArgumentError("sketch style '" + name + "': sigma must be positive");
  if (!(k > 1.0)) throw ArgumentError("sketch style '" + name + "': k must exceed 1");
}

const std::vector<SketchStyle>& style_presets() {
  static const std::vector<SketchStyle> presets = {
      {"xdog-fine", 0.5, 1.6, 10.0, 10.0, 0.0, false},
      {"xdog-coarse", 1.0, 1.8, 12.0, 2.5, 0.0, false},
      {"xdog-soft", 0.8, 1.6, 16.0, 3.0, 0.0, false},
  };
  return presets;
}

SketchStyle style_preset(std::string_view name) {
  for (const SketchStyle& s : style_presets()) {
    if (s.name == name) return s;
  }
  throw ArgumentError("unknown sketch style '" + std::string(name) + "'");
}

Image luminance01(const Image& photo) {
  if (photo.channels != 3 && photo.channels != 1) {
    throw DimensionError("luminance expects 1 or 3 channels");
  }
  Image out(photo.height, photo.width, 1);
  for (std::size_t i = 0; i < photo.height * photo.width; ++i) {
    double l;
    if (photo.channels == 1) {
      l = photo.pixels[i];
    } else {
      l = 0.299 * photo.pixels[3 * i] + 0.587 * photo.pixels[3 * i + 1] +
          0.114 * photo.pixels[3 * i + 2];
    }
    out.pixels[i] = static_cast<float>((l + 1.0) * 0.5);
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("gaussian_blur: sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const auto h = static_cast<std::ptrdiff_t>(image.height);
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const std::size_t c = image.channels;
  const auto clamp_index = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, n - 1));
  };
  Image tmp(image.height, image.width, c);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
          acc += kernel[static_cast<std::size_t>(d + radius)] *
                 image.at(static_cast<std::size_t>(y), clamp_index(x + d, w), ch);
        }
        tmp.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) = static_cast<float>(acc);
      }
  Image out(image.height, image.width, c);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
          acc += kernel[static_cast<std::size_t>(d + radius)] *
                 tmp.at(clamp_index(y + d, h), static_cast<std::size_t>(x), ch);
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) = static_cast<float>(acc);
      }
  return out;
}

Image xdog(const Image& photo, const SketchStyle& style) {
  style.validate();
  const Image lum = luminance01(photo);
  const Image narrow = gaussian_blur(lum, style.sigma);
  const Image wide = gaussian_blur(lum, style.k * style.sigma);
  Image out(photo.height, photo.width, 1);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double s = (1.0 + style.sharpening) * narrow.pixels[i] - style.sharpening * wide.pixels[i];
    const double t = s >= style.epsilon ? 1.0 : 1.0 + std::tanh(style.phi * (s - style.epsilon));
    const double v = 2.0 * t - 1.0;
    out.pixels[i] = static_cast<float>(style.invert ? -v : v);
  }
  return out;
}

JointImage make_joint(const Image& sketch, const Image& photo) {
  if (sketch.height != photo.height || sketch.width != photo.width) {
    throw DimensionError("make_joint: sketch " + std::to_string(sketch.height) + "x" +
                         std::to_string(sketch.width) + " vs photo " +
                         std::to_string(photo.height) + "x" + std::to_string(photo.width));
  }
  if (photo.channels != 3) throw DimensionError("make_joint: photo must have 3 channels");
  const Image left = to_rgb(sketch.channels == 1 ? sketch : to_gray(sketch));
  const Image halves[] = {left, photo};
  return JointImage{hconcat(halves)};
}

std::pair<Image, Image> split_joint(const JointImage& joint) {
  const std::size_t w = joint.half_width();
  if (joint.pixels.width != 2 * w || joint.pixels.width == 0) {
    throw DimensionError("split_joint: joint width must be even and positive");
  }
  return {crop(joint.pixels, 0, 0, joint.height(), w), crop(joint.pixels, 0, w, joint.height(), w)};
}

std::string_view to_string(Direction d) {
  return d == Direction::sketch_to_image ? "sketch_to_image" : "image_to_sketch";
}

Direction parse_direction(std::string_view s) {
  if (s == "sketch_to_image") return Direction::sketch_to_image;
  if (s == "image_to_sketch") return Direction::image_to_sketch;
  throw ArgumentError("unknown direction '" + std::string(s) + "'");
}

Mask make_mask(Direction direction, std::size_t height, std::size_t half_width) {
  Mask mask{Image(height, 2 * half_width, 1, 0.0f), direction};
  const std::size_t begin = direction == Direction::sketch_to_image ? 0 : half_width;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = begin; x < begin + half_width; ++x) mask.values.at(y, x, 0) = 1.0f;
  return mask;
}

std::vector<std::size_t> mask_indices(const Mask& mask) {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < mask.values.pixels.size(); ++p) {
    if (mask.values.pixels[p] != 0.0f) {
      for (std::size_t c = 0; c < 3; ++c) out.push_back(p * 3 + c);
    }
  }
  return out;
}

}  // namespace ctxgan
