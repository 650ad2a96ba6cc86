#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/ops.hpp"
#include "ctxgan/random.hpp"
#include "ctxgan/tensor.hpp"

namespace ctxgan {

/// Shape of both networks. The generator grows a 4x8 seed grid through
/// `stages()` stride-2 up-convolutions to height x width (the joint image);
/// the discriminator mirrors it back down.
struct Architecture {
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t latent_dim = 100;
  std::size_t max_channels = 256;
  std::size_t kernel = 5;
  double lrelu_slope = 0.2;

  static Architecture full_scale();
  static Architecture desk_scale();

  /// Number of doubling stages n with 4*2^n == height and 8*2^n == width.
  /// Throws ArgumentError if the resolution is not reachable that way.
  std::size_t stages() const;
  /// Generator channels after up-stage i (the last stage emits 3).
  std::size_t generator_channels(std::size_t stage) const;
  /// Discriminator channels after down-stage i.
  std::size_t discriminator_channels(std::size_t stage) const;
  std::size_t half_width() const { return width / 2; }
  std::string resolution() const;
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

/// The optimization variable of the projection; components live in [-1,1].
struct LatentVector {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const LatentVector&, const LatentVector&) = default;
};

LatentVector sample_latent(Rng& rng, std::size_t dim = 100);
/// [n, dim] batch of i.i.d. U[-1,1] codes.
Tensor<float> sample_latent_batch(Rng& rng, std::size_t n, std::size_t dim);
Tensor<float> to_tensor(const LatentVector& z);

/// A flat float array with a name, the unit of serialization.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// How a forward pass treats batchnorm and weights. Running statistics are
/// never touched by `forward`; see `forward_train`.
struct Pass {
  BatchNormMode norm = BatchNormMode::infer;
  /// Put weights on the tape so backward() produces their gradients.
  bool param_grads = false;
};

template <typename T>
class Generator {
 public:
  Generator() = default;
  explicit Generator(const Architecture& arch);
  /// Gaussian init: weights N(0, 0.02), gamma N(1, 0.02), beta and biases 0.
  Generator(const Architecture& arch, Rng& rng);
  /// Copies own their weights; tensors alone would share storage.
  Generator(const Generator& other);
  Generator& operator=(const Generator& other);
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  const Architecture& architecture() const { return arch_; }

  /// z [N, latent] -> [N, height, width, 3] in [-1,1].
  Tensor<T> forward(const Tensor<T>& z, Pass pass = {}) const;
  /// Batch statistics, weight gradients, running statistics updated.
  Tensor<T> forward_train(const Tensor<T>& z);

  /// Trainable tensors (weights, gamma, beta) in a fixed order.
  std::vector<Tensor<T>> parameters() const;
  /// Everything needed to reproduce the net, running statistics included.
  std::vector<NamedArray> export_arrays() const;
  /// Fills this net from arrays exported by a net with the same
  /// architecture. Throws FormatError naming a missing or misshapen array.
  void import_arrays(const std::vector<NamedArray>& arrays);

  template <typename U>
  Generator<U> cast() const;

 private:
  Tensor<T> run(const Tensor<T>& z, Pass pass, bool update_stats);

  Architecture arch_;
  Tensor<T> fc_weight_;
  std::vector<Tensor<T>> kernels_;
  Tensor<T> out_bias_;
  std::vector<Tensor<T>> gamma_;
  std::vector<Tensor<T>> beta_;
  std::vector<RunningStats<T>> stats_;

  template <typename>
  friend class Generator;
};

template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(const Architecture& arch);
  Discriminator(const Architecture& arch, Rng& rng);
  Discriminator(const Discriminator& other);
  Discriminator& operator=(const Discriminator& other);
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  const Architecture& architecture() const { return arch_; }

  /// x [N, height, width, 3] -> logits [N].
  Tensor<T> forward(const Tensor<T>& x, Pass pass = {}) const;
  Tensor<T> forward_train(const Tensor<T>& x);

  std::vector<Tensor<T>> parameters() const;
  std::vector<NamedArray> export_arrays() const;
  void import_arrays(const std::vector<NamedArray>& arrays);

  template <typename U>
  Discriminator<U> cast() const;

 private:
  Tensor<T> run(const Tensor<T>& x, Pass pass, bool update_stats);

  Architecture arch_;
  std::vector<Tensor<T>> kernels_;
  Tensor<T> first_bias_;
  std::vector<Tensor<T>> gamma_;
  std::vector<Tensor<T>> beta_;
  std::vector<RunningStats<T>> stats_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;

  template <typename>
  friend class Discriminator;
};

/// Single-sample convenience wrappers in inference mode.
Tensor<float> generate(const Generator<float>& g, const LatentVector& z);
float discriminate(const Discriminator<float>& d, const Tensor<float>& x);

struct TrainingMetadata {
  std::int64_t steps = 0;
  std::int64_t epochs = 0;
  std::uint64_t seed = 0;
  /// Styles this bundle has been trained on, oldest first.
  std::vector<std::string> style_history;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

void to_json(nlohmann::json& j, const TrainingMetadata& m);
void from_json(const nlohmann::json& j, TrainingMetadata& m);

struct ModelBundle {
  Architecture arch;
  std::string style;
  TrainingMetadata metadata;
  Generator<float> generator;
  Discriminator<float> discriminator;

  /// Freshly initialized networks.
  static ModelBundle initialize(const Architecture& arch, std::uint64_t seed,
                                std::string style = "xdog-fine");

  nlohmann::json descriptor() const;
  std::vector<NamedArray> export_arrays() const;
  /// 64-bit FNV-1a over every weight array, for cheap equality checks.
  std::uint64_t fingerprint() const;
};

bool operator==(const ModelBundle& a, const ModelBundle& b);

}  // namespace ctxgan
