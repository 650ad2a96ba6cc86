#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/dataset.hpp"
#include "ctxgan/image.hpp"
#include "ctxgan/model.hpp"
#include "ctxgan/projection.hpp"
#include "ctxgan/sketch.hpp"

namespace ctxgan {

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over 'valid' Gaussian windows of the [0,1] luminance of two
/// equally sized images (values in [-1,1]); the window shrinks to the
/// smaller image side when needed.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

/// Mass-convention KL from the input sketch to the sketch re-extracted from
/// a generated photo. Zero when they agree; lower is more faithful.
double reextraction_score(const Image& generated_photo, const Image& input_sketch,
                          const SketchStyle& style);

struct EvalConfig {
  ProjectionConfig projection;
  /// Number of test samples drawn from the corpus front (0 = all).
  std::size_t count = 0;
  std::size_t jobs = 1;
  SketchStyle style = style_preset("xdog-fine");
  /// Keep sketch | completion | truth strips for write_report.
  bool montages = false;
};

void to_json(nlohmann::json& j, const EvalConfig& c);

struct EvalRow {
  std::size_t index = 0;
  double ssim = 0.0;
  double reextraction = 0.0;
  double final_contextual = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
};

Aggregate aggregate(std::vector<double> values);

struct EvalReport {
  std::vector<EvalRow> rows;
  Aggregate ssim;
  Aggregate reextraction;
  nlohmann::json config;
  std::vector<Image> montages;

  nlohmann::json to_json() const;
};

/// Completes the sketch of every selected base pair with `bundle` and scores
/// the generated photo half against the ground truth. Sample i uses
/// projection seed derived from (config.projection.seed, i), so results do
/// not depend on `jobs`. Throws ArgumentError for an empty test set.
EvalReport evaluate(const ModelBundle& bundle, const Corpus& test, const EvalConfig& config);
EvalReport evaluate(const ModelBundle& bundle, const std::vector<SketchPair>& test,
                    const EvalConfig& config);

/// report.json, rows.csv and any montage_NNNNN.png strips inside `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace ctxgan
