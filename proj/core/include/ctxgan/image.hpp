#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ctxgan/tensor.hpp"

namespace ctxgan {

/// HWC float image. Pixel values live in [-1, 1] throughout the library.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

/// u8 -> [-1,1]: v = 2 * (u / 255) - 1.
float u8_to_unit(std::uint8_t u);
/// [-1,1] -> u8, rounding half away from zero, clamped.
std::uint8_t unit_to_u8(float v);

/// Decodes 8-bit (or wider, stripped) PNG into a gray (1 channel) or RGB
/// (3 channel) image; alpha is dropped and palettes expanded.
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& image);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
Image center_crop_square(const Image& image);
Image flip_horizontal(const Image& image);
/// Area averaging when shrinking, bilinear when enlarging.
Image resize(const Image& image, std::size_t h, std::size_t w);
/// 1 -> 3 channels by replication; 3-channel input returned as is.
Image to_rgb(const Image& image);
/// Single-channel view of an image: identical channels are taken as is,
/// otherwise Rec.601 luminance.
Image to_gray(const Image& image);
/// Horizontal concatenation of images with the same height and channels.
Image hconcat(std::span<const Image> images);

Tensor<float> to_tensor(const Image& image);
/// Image at batch index `index` of an [N,H,W,C] tensor (or an [H,W,C] one).
Image from_tensor(const Tensor<float>& t, std::size_t index = 0);

}  // namespace ctxgan
