#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/image.hpp"
#include "ctxgan/random.hpp"
#include "ctxgan/sketch.hpp"

namespace ctxgan {

enum class CorpusSource { procedural, folder };

struct CorpusSpec {
  CorpusSource source = CorpusSource::procedural;
  std::filesystem::path folder;
  /// Number of base images (procedural) or an upper bound on ingested files
  /// (folder; 0 means all).
  std::size_t count = 1000;
  /// Side of the square photo; the joint image is resolution x 2*resolution.
  std::size_t resolution = 32;
  std::vector<SketchStyle> styles = {style_preset("xdog-fine")};
  std::size_t crops = 4;
  bool flip = true;
  /// Side of the random crop window relative to the source.
  double crop_fraction = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  /// Augmented variants per base image.
  std::size_t variants() const { return crops * (flip ? 2 : 1); }
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);
void to_json(nlohmann::json& j, const SketchStyle& s);
void from_json(const nlohmann::json& j, SketchStyle& s);

enum class ShapeKind { ellipse, triangle, rounded_rect };
std::string_view to_string(ShapeKind k);

struct SketchPair {
  Image photo;   ///< [R,R,3]
  Image sketch;  ///< [R,R,1]
  std::string style;
  std::string label;  ///< shape kind or source file name

  JointImage joint() const { return make_joint(sketch, photo); }
};

/// The i-th procedural photo: one anti-aliased primitive with random color,
/// size, position and rotation on a plain background of contrasting
/// luminance. Depends only on (seed, index).
Image render_primitive(std::uint64_t seed, std::size_t index, std::size_t resolution,
                       ShapeKind* kind = nullptr);

/// Deterministic under spec.seed; sample i uses style i mod |styles|.
std::vector<SketchPair> generate_procedural(const CorpusSpec& spec);
SketchPair procedural_pair(const CorpusSpec& spec, std::size_t index);

/// Sorted-filename ingestion with center square crop and resize. Files that
/// fail to decode are skipped with a warning; a folder without any usable
/// image throws ArgumentError.
std::vector<SketchPair> ingest_folder(const CorpusSpec& spec);

/// `crops` random crops (window crop_fraction of the side, uniform offset,
/// resized back), each followed by its mirror when `flip` is set. Photo and
/// sketch receive identical transforms.
std::vector<SketchPair> augment(const SketchPair& pair, std::size_t crops, bool flip, Rng& rng,
                                double crop_fraction = 0.9);

/// Indexable view over base pairs times augmentation variants. Procedural
/// corpora render on demand; folder corpora are ingested up front.
class Corpus {
 public:
  explicit Corpus(CorpusSpec spec);
  /// Pairs already in memory (e.g. loaded from a manifest).
  Corpus(CorpusSpec spec, std::vector<SketchPair> base);

  const CorpusSpec& spec() const { return spec_; }
  std::size_t base_count() const;
  std::size_t size() const { return base_count() * spec_.variants(); }
  SketchPair base_pair(std::size_t base_index) const;
  SketchPair pair(std::size_t index) const;
  JointImage joint(std::size_t index) const { return pair(index).joint(); }

 private:
  CorpusSpec spec_;
  std::vector<SketchPair> base_;
  bool on_demand_ = false;
};

/// Writes one joint PNG per base pair plus manifest.json (spec, seed, files).
/// Returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reads a manifest and its joint PNGs back.
Corpus load_corpus(const std::filesystem::path& manifest);

struct Batch {
  Tensor<float> joints;  ///< [N,R,2R,3]
  std::vector<std::string> styles;
  std::vector<std::size_t> indices;
};

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices);
/// Shuffled 0..n-1, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Blocking multi-producer multi-consumer queue with a fixed capacity.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  /// Blocks while full. Returns false if the queue was closed.
  bool push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  /// Blocks while empty. Returns nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace ctxgan
