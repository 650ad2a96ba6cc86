#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctxgan/image.hpp"

namespace ctxgan {

/// Parameters of the extended difference-of-Gaussians stylization.
///
/// On luminance L in [0,1]:
///   S = (1 + sharpening) * G_sigma(L) - sharpening * G_{k*sigma}(L)
///   T = 1                          if S >= epsilon
///       1 + tanh(phi * (S - epsilon))  otherwise
/// and the sketch value is 2T - 1, so a white background is +1 and
/// strokes head toward -1. `invert` swaps the two.
struct SketchStyle {
  std::string name;
  double sigma = 0.6;
  double k = 1.6;
  double sharpening = 20.0;
  double phi = 10.0;
  double epsilon = 0.0;
  bool invert = false;

  /// Throws ArgumentError unless sigma > 0 and k > 1.
  void validate() const;
  friend bool operator==(const SketchStyle&, const SketchStyle&) = default;
};

/// "xdog-fine" (thin outlines), "xdog-coarse" (photocopy-like thick strokes) and
/// "xdog-soft" (low threshold steepness, grayish strokes).
const std::vector<SketchStyle>& style_presets();
/// Throws ArgumentError for unknown names.
SketchStyle style_preset(std::string_view name);

/// Rec.601 luminance mapped to [0,1].
Image luminance01(const Image& photo);
/// Separable Gaussian with edge-replicate borders, radius ceil(3 sigma).
Image gaussian_blur(const Image& image, double sigma);

/// photo [H,W,3] in [-1,1] -> sketch [H,W,1] in [-1,1].
Image xdog(const Image& photo, const SketchStyle& style);

/// H x 2W x 3 image: left half the sketch (replicated to three channels),
/// right half the photo.
struct JointImage {
  Image pixels;

  std::size_t height() const { return pixels.height; }
  std::size_t half_width() const { return pixels.width / 2; }
  friend bool operator==(const JointImage&, const JointImage&) = default;
};

JointImage make_joint(const Image& sketch, const Image& photo);
/// Returns (sketch half [H,W,3], photo half [H,W,3]).
std::pair<Image, Image> split_joint(const JointImage& joint);

enum class Direction { sketch_to_image, image_to_sketch };

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view s);

/// Binary [H,2W,1] map with ones on the known (context) half.
struct Mask {
  Image values;
  Direction direction = Direction::sketch_to_image;

  /// True when the context half is the left (sketch) half.
  bool context_is_left() const { return direction == Direction::sketch_to_image; }
};

/// sketch_to_image keeps the left half, image_to_sketch the right half.
Mask make_mask(Direction direction, std::size_t height, std::size_t half_width);

/// Flat indices (into an H x 2W x 3 buffer) of every channel of every pixel
/// where the mask is one, in row-major order.
std::vector<std::size_t> mask_indices(const Mask& mask);

}  // namespace ctxgan
