#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/image.hpp"
#include "ctxgan/model.hpp"
#include "ctxgan/sketch.hpp"

namespace ctxgan {

enum class Clipping { stochastic, hard };

/// How two masked halves become distributions for the KL term.
///   mass:      s = (1 - v)/2 + eps per element, normalized over the masked
///              region; KL(p_input || q_generated).
///   bernoulli: s clamped to [eps, 1-eps] is a per-element stroke
///              probability; mean of the elementwise Bernoulli KLs.
enum class KlConvention { mass, bernoulli };

struct ProjectionConfig {
  double lambda = 0.01;
  double momentum = 0.9;
  double step_size = 0.01;
  std::int64_t iterations = 500;
  std::size_t init_candidates = 10;
  Clipping clipping = Clipping::stochastic;
  Direction direction = Direction::sketch_to_image;
  std::uint64_t seed = 0;
  KlConvention kl = KlConvention::mass;
  double kl_epsilon = 1e-6;
  double perceptual_epsilon = 1e-8;
  /// Keep a composite frame every this many iterations (0 = none).
  std::int64_t frame_every = 0;
  /// Progress callback cadence in iterations.
  std::int64_t progress_every = 25;

  void validate() const;
};

void to_json(nlohmann::json& j, const ProjectionConfig& c);
void from_json(const nlohmann::json& j, ProjectionConfig& c);

// -- objective -------------------------------------------------------------

/// Contextual term between the masked halves of y and gz
/// (either [H,2W,3] or [1,H,2W,3]); differentiable in gz only.
template <typename T>
Tensor<T> contextual_loss(const Tensor<T>& y, const Tensor<T>& gz, const Mask& mask,
                          KlConvention kl = KlConvention::mass, double epsilon = 1e-6);

/// log(1 - sigmoid(D(gz)) + eps) with D in inference mode and frozen weights.
template <typename T>
Tensor<T> perceptual_loss(const Discriminator<T>& d, const Tensor<T>& gz, double epsilon = 1e-8);

double contextual_value(const Image& y, const Image& gz, const Mask& mask,
                        KlConvention kl = KlConvention::mass, double epsilon = 1e-6);

// -- procedure -------------------------------------------------------------

struct TraceRow {
  std::int64_t iter = 0;
  double contextual = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
};

struct ProjectionTrace {
  std::vector<TraceRow> rows;  ///< iterations + 1 entries, row i after i steps
  std::vector<LatentVector> latents;  ///< z at every row
  std::vector<std::pair<std::int64_t, Image>> frames;
};

struct InitResult {
  LatentVector z;
  std::size_t index = 0;
  std::vector<double> losses;  ///< contextual loss of each candidate
};

/// Draws N latents from rng, renders each and keeps the one whose masked
/// half is closest to y's (lowest index on ties).
InitResult initialize(const Image& y, const Mask& mask, const Generator<float>& g, std::size_t n,
                      Rng& rng, KlConvention kl = KlConvention::mass, double epsilon = 1e-6);

/// Components inside [-1,1] are kept; the rest are redrawn uniformly.
LatentVector stochastic_clip(const LatentVector& z, Rng& rng);
LatentVector hard_clip(const LatentVector& z);

struct ProgressEvent {
  std::int64_t iter = 0;
  double contextual = 0.0;
  double perceptual = 0.0;
  const Image* preview = nullptr;  ///< composite at the current z
};

struct ProjectionResult {
  LatentVector z;
  InitResult init;
  ProjectionTrace trace;
};

using ProgressFn = std::function<void(const ProgressEvent&)>;

/// Momentum descent on contextual + lambda * perceptual from the best-of-N
/// start; G and D are only read. Progress fires after iterations that are
/// multiples of config.progress_every and after the last one.
ProjectionResult project(const Image& y, const Mask& mask, const ModelBundle& bundle,
                         const ProjectionConfig& config, const ProgressFn& progress = {});

/// M * y + (1 - M) * gz; y and gz are [H,2W,3].
Image composite(const Image& y, const Mask& mask, const Image& gz);

struct Completion {
  Image output;  ///< composited joint image
  JointImage input;
  Mask mask;
  ProjectionResult projection;
};

/// Builds y with the context half from `input` (a sketch for
/// sketch_to_image, a photo for image_to_sketch) and zeros elsewhere, then
/// runs initialize, project and composite.
Completion complete(const Image& input, const ModelBundle& bundle, const ProjectionConfig& config,
                    const ProgressFn& progress = {});

/// The context-half joint image for `input`.
JointImage corrupted_joint(const Image& input, Direction direction, std::size_t resolution);

void write_trace_csv(const std::filesystem::path& path, const ProjectionTrace& trace);
/// One PNG per stored frame, named <stem>_<iter>.png, plus a horizontal strip
/// <stem>_strip.png. Returns the files written.
std::vector<std::filesystem::path> write_frames(const std::filesystem::path& dir,
                                                const std::string& stem,
                                                const ProjectionTrace& trace);

}  // namespace ctxgan
