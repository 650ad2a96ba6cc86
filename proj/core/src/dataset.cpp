#include "ctxgan/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <spdlog/spdlog.h>

#include "ctxgan/errors.hpp"

namespace ctxgan {

// -- spec ------------------------------------------------------------------

void CorpusSpec::validate() const {
  if (source == CorpusSource::procedural && count == 0) {
    throw ArgumentError("corpus: count must be positive");
  }
  if (resolution < 4) throw ArgumentError("corpus: resolution must be at least 4");
  if (styles.empty()) throw ArgumentError("corpus: at least one sketch style is required");
  for (const SketchStyle& s : styles) s.validate();
  if (crops == 0) throw ArgumentError("corpus: crops must be at least 1");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
    throw ArgumentError("corpus: crop_fraction must lie in (0,1]");
  }
  if (source == CorpusSource::folder && folder.empty()) {
    throw ArgumentError("corpus: folder source needs a folder path");
  }
}

void to_json(nlohmann::json& j, const SketchStyle& s) {
  j = nlohmann::json{{"name", s.name},   {"sigma", s.sigma},     {"k", s.k},
                     {"sharpening", s.sharpening}, {"phi", s.phi}, {"epsilon", s.epsilon},
                     {"invert", s.invert}};
}

void from_json(const nlohmann::json& j, SketchStyle& s) {
  if (j.is_string()) {
    s = style_preset(j.get<std::string>());
    return;
  }
  SketchStyle d;
  if (j.contains("name")) {
    // Named presets supply defaults for any field left out.
    try {
      d = style_preset(j.at("name").get<std::string>());
    } catch (const ArgumentError&) {
      d.name = j.at("name").get<std::string>();
    }
  }
  s.name = d.name;
  s.sigma = j.value("sigma", d.sigma);
  s.k = j.value("k", d.k);
  s.sharpening = j.value("sharpening", d.sharpening);
  s.phi = j.value("phi", d.phi);
  s.epsilon = j.value("epsilon", d.epsilon);
  s.invert = j.value("invert", d.invert);
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = nlohmann::json{{"source", s.source == CorpusSource::procedural ? "procedural" : "folder"},
                     {"folder", s.folder.string()},
                     {"count", s.count},
                     {"resolution", s.resolution},
                     {"styles", s.styles},
                     {"crops", s.crops},
                     {"flip", s.flip},
                     {"crop_fraction", s.crop_fraction},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  const CorpusSpec d;
  const std::string source = j.value("source", std::string("procedural"));
  if (source == "procedural") {
    s.source = CorpusSource::procedural;
  } else if (source == "folder") {
    s.source = CorpusSource::folder;
  } else {
    throw ArgumentError("corpus: unknown source '" + source + "'");
  }
  s.folder = j.value("folder", std::string{});
  s.count = j.value("count", d.count);
  s.resolution = j.value("resolution", d.resolution);
  s.styles = j.contains("styles") ? j.at("styles").get<std::vector<SketchStyle>>() : d.styles;
  s.crops = j.value("crops", d.crops);
  s.flip = j.value("flip", d.flip);
  s.crop_fraction = j.value("crop_fraction", d.crop_fraction);
  s.seed = j.value("seed", d.seed);
}

// -- procedural primitives -------------------------------------------------

std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::rounded_rect: return "rounded_rect";
  }
  return "unknown";
}

namespace {

struct Primitive {
  ShapeKind kind;
  double cx, cy, size, aspect, angle;
  std::array<float, 3> fill, background;
};

double luma(const std::array<float, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Primitive sample_primitive(Rng& rng) {
  Primitive p{};
  p.kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
  p.cx = uniform(rng, 0.35, 0.65);
  p.cy = uniform(rng, 0.35, 0.65);
  p.size = uniform(rng, 0.2, 0.34);
  p.aspect = uniform(rng, 0.65, 1.0);
  p.angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  // Dark shape on a light backdrop with free hues. XDoG with a non-positive
  // threshold only marks edges whose darker side is dark enough, and a fixed
  // polarity keeps the photo's luminance layout implied by its sketch.
  do {
    for (float& v : p.fill) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  } while (luma(p.fill) > -0.3);
  do {
    for (float& v : p.background) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  } while (luma(p.background) < 0.4);
  return p;
}

// Point-in-shape on the unit square, in the primitive's rotated frame.
bool inside(const Primitive& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy;
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  const double a = p.size, b = p.size * p.aspect;
  switch (p.kind) {
    case ShapeKind::ellipse:
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    case ShapeKind::triangle: {
      std::array<std::pair<double, double>, 3> vtx;
      for (int i = 0; i < 3; ++i) {
        const double t = std::numbers::pi / 2 + 2.0 * std::numbers::pi * i / 3.0;
        vtx[static_cast<std::size_t>(i)] = {a * 1.2 * std::cos(t), b * 1.2 * std::sin(t)};
      }
      bool neg = false, pos = false;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto [x0, y0] = vtx[i];
        const auto [x1, y1] = vtx[(i + 1) % 3];
        const double cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0);
        neg |= cross < 0;
        pos |= cross > 0;
      }
      return !(neg && pos);
    }
    case ShapeKind::rounded_rect: {
      const double r = 0.3 * std::min(a, b);
      const double qx = std::abs(u) - (a - r), qy = std::abs(v) - (b - r);
      const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
      return outside + std::min(std::max(qx, qy), 0.0) - r <= 0.0;
    }
  }
  return false;
}

}  // namespace

Image render_primitive(std::uint64_t seed, std::size_t index, std::size_t resolution,
                       ShapeKind* kind) {
  Rng rng = make_rng(seed, {0x70726f63, index});
  const Primitive p = sample_primitive(rng);
  if (kind != nullptr) *kind = p.kind;
  constexpr int ss = 4;
  Image img(resolution, resolution, 3);
  const double inv = 1.0 / static_cast<double>(resolution);
  for (std::size_t y = 0; y < resolution; ++y)
    for (std::size_t x = 0; x < resolution; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          hits += inside(p, (static_cast<double>(x) + (sx + 0.5) / ss) * inv,
                         (static_cast<double>(y) + (sy + 0.5) / ss) * inv);
        }
      const float cover = static_cast<float>(hits) / (ss * ss);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = cover * p.fill[c] + (1.0f - cover) * p.background[c];
      }
    }
  return img;
}

SketchPair procedural_pair(const CorpusSpec& spec, std::size_t index) {
  ShapeKind kind{};
  Image photo = render_primitive(spec.seed, index, spec.resolution, &kind);
  const SketchStyle& style = spec.styles[index % spec.styles.size()];
  Image sketch = xdog(photo, style);
  return SketchPair{std::move(photo), std::move(sketch), style.name, std::string(to_string(kind))};
}

std::vector<SketchPair> generate_procedural(const CorpusSpec& spec) {
  spec.validate();
  std::vector<SketchPair> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(procedural_pair(spec, i));
  return out;
}

// -- folders ---------------------------------------------------------------

std::vector<SketchPair> ingest_folder(const CorpusSpec& spec) {
  spec.validate();
  if (!std::filesystem::is_directory(spec.folder)) {
    throw ArgumentError("corpus: '" + spec.folder.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(spec.folder)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<SketchPair> out;
  for (const auto& file : files) {
    if (spec.count != 0 && out.size() >= spec.count) break;
    Image img;
    try {
      img = read_png(file);
    } catch (const std::exception& e) {
      spdlog::warn("skipping {}: {}", file.string(), e.what());
      continue;
    }
    Image photo = resize(to_rgb(center_crop_square(img)), spec.resolution, spec.resolution);
    const SketchStyle& style = spec.styles[out.size() % spec.styles.size()];
    Image sketch = xdog(photo, style);
    out.push_back(SketchPair{std::move(photo), std::move(sketch), style.name,
                             file.filename().string()});
  }
  if (out.empty()) {
    throw ArgumentError("corpus: no decodable images in '" + spec.folder.string() + "'");
  }
  return out;
}

// -- augmentation ----------------------------------------------------------

std::vector<SketchPair> augment(const SketchPair& pair, std::size_t crops, bool flip, Rng& rng,
                                double crop_fraction) {
  const std::size_t h = pair.photo.height, w = pair.photo.width;
  const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(h * crop_fraction)));
  const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(w * crop_fraction)));
  std::vector<SketchPair> out;
  out.reserve(crops * (flip ? 2 : 1));
  for (std::size_t i = 0; i < crops; ++i) {
    const auto top = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
    const auto left = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
    SketchPair c = pair;
    c.photo = resize(crop(pair.photo, top, left, ch, cw), h, w);
    c.sketch = resize(crop(pair.sketch, top, left, ch, cw), h, w);
    if (flip) {
      SketchPair f = c;
      f.photo = flip_horizontal(c.photo);
      f.sketch = flip_horizontal(c.sketch);
      out.push_back(std::move(c));
      out.push_back(std::move(f));
    } else {
      out.push_back(std::move(c));
    }
  }
  return out;
}

// -- corpus ----------------------------------------------------------------

Corpus::Corpus(CorpusSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.source == CorpusSource::procedural) {
    on_demand_ = true;
  } else {
    base_ = ingest_folder(spec_);
  }
}

Corpus::Corpus(CorpusSpec spec, std::vector<SketchPair> base)
    : spec_(std::move(spec)), base_(std::move(base)) {
  spec_.validate();
  if (base_.empty()) throw ArgumentError("corpus: no pairs");
}

std::size_t Corpus::base_count() const { return on_demand_ ? spec_.count : base_.size(); }

SketchPair Corpus::base_pair(std::size_t base_index) const {
  if (base_index >= base_count()) throw ArgumentError("corpus: index out of range");
  return on_demand_ ? procedural_pair(spec_, base_index) : base_[base_index];
}

SketchPair Corpus::pair(std::size_t index) const {
  const std::size_t per = spec_.variants();
  const std::size_t base = index / per;
  const std::size_t variant = index % per;
  const SketchPair original = base_pair(base);
  if (spec_.crops == 1 && spec_.crop_fraction == 1.0) {
    if (variant == 0) return original;
    SketchPair f = original;
    f.photo = flip_horizontal(original.photo);
    f.sketch = flip_horizontal(original.sketch);
    return f;
  }
  Rng rng = make_rng(spec_.seed, {0x61756720, base});
  auto all = augment(original, spec_.crops, spec_.flip, rng, spec_.crop_fraction);
  return std::move(all[variant]);
}

std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.base_count(); ++i) {
    const SketchPair p = corpus.base_pair(i);
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    write_png(dir / name, p.joint().pixels);
    files.push_back({{"file", name}, {"style", p.style}, {"label", p.label}});
  }
  const nlohmann::json manifest{{"spec", corpus.spec()}, {"seed", corpus.spec().seed}, {"files", files}};
  const auto path = dir / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << '\n';
  return path;
}

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ArgumentError("corpus: cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corpus: manifest is not valid JSON: " + std::string(e.what()));
  }
  CorpusSpec spec = manifest.at("spec").get<CorpusSpec>();
  const auto dir = manifest_path.parent_path();
  std::vector<SketchPair> pairs;
  for (const auto& f : manifest.at("files")) {
    const JointImage joint{to_rgb(read_png(dir / f.at("file").get<std::string>()))};
    if (joint.height() != spec.resolution || joint.half_width() != spec.resolution) {
      throw DimensionError("corpus: " + f.at("file").get<std::string>() +
                           " does not match the manifest resolution");
    }
    auto [sketch, photo] = split_joint(joint);
    pairs.push_back(SketchPair{std::move(photo), to_gray(sketch), f.value("style", std::string{}),
                               f.value("label", std::string{})});
  }
  return Corpus(std::move(spec), std::move(pairs));
}

// -- batching --------------------------------------------------------------

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("batch: no indices");
  const std::size_t r = corpus.spec().resolution;
  const std::size_t per = r * 2 * r * 3;
  std::vector<float> data(indices.size() * per);
  Batch batch;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const SketchPair p = corpus.pair(indices[i]);
    const JointImage j = p.joint();
    std::copy(j.pixels.pixels.begin(), j.pixels.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>(i * per));
    batch.styles.push_back(p.style);
  }
  batch.joints = Tensor<float>({indices.size(), r, 2 * r, 3}, std::move(data));
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed, {0x65706f63, epoch});
  // Fisher-Yates with our own index draws so the order is the same under
  // every standard library.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace ctxgan
