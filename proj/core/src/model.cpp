#include "ctxgan/model.hpp"

#include <algorithm>
#include <cstring>
#include <map>

#include "ctxgan/errors.hpp"

namespace ctxgan {

// -- architecture ----------------------------------------------------------

Architecture Architecture::full_scale() {
  Architecture a;
  a.height = 64;
  a.width = 128;
  a.max_channels = 512;
  return a;
}

Architecture Architecture::desk_scale() { return Architecture{}; }

std::size_t Architecture::stages() const {
  std::size_t n = 0;
  std::size_t h = 4, w = 8;
  while (h < height && n < 16) {
    h *= 2;
    w *= 2;
    ++n;
  }
  if (h != height || w != width || n == 0) {
    throw ArgumentError("architecture: joint resolution " + resolution() +
                        " is not 4x8 doubled one or more times");
  }
  return n;
}

std::size_t Architecture::generator_channels(std::size_t stage) const {
  const std::size_t n = stages();
  if (stage + 1 >= n) return 3;
  return max_channels >> (stage + 1);
}

std::size_t Architecture::discriminator_channels(std::size_t stage) const {
  return max_channels >> (stages() - 1 - stage);
}

std::string Architecture::resolution() const {
  return std::to_string(height) + "x" + std::to_string(width);
}

void Architecture::validate() const {
  const std::size_t n = stages();
  if (latent_dim == 0) throw ArgumentError("architecture: latent_dim must be positive");
  if (kernel == 0) throw ArgumentError("architecture: kernel must be positive");
  if ((max_channels >> (n - 1)) == 0 || (max_channels >> (n - 1)) << (n - 1) != max_channels) {
    throw ArgumentError("architecture: max_channels " + std::to_string(max_channels) +
                        " must be divisible by 2^" + std::to_string(n - 1));
  }
  if (!(lrelu_slope >= 0.0 && lrelu_slope < 1.0)) {
    throw ArgumentError("architecture: lrelu_slope must lie in [0,1)");
  }
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json{{"height", a.height},         {"width", a.width},
                     {"latent_dim", a.latent_dim}, {"max_channels", a.max_channels},
                     {"kernel", a.kernel},         {"lrelu_slope", a.lrelu_slope}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  const Architecture d;
  a.height = j.value("height", d.height);
  a.width = j.value("width", d.width);
  a.latent_dim = j.value("latent_dim", d.latent_dim);
  a.max_channels = j.value("max_channels", d.max_channels);
  a.kernel = j.value("kernel", d.kernel);
  a.lrelu_slope = j.value("lrelu_slope", d.lrelu_slope);
}

// -- latents ---------------------------------------------------------------

LatentVector sample_latent(Rng& rng, std::size_t dim) {
  LatentVector z;
  z.values.resize(dim);
  for (float& v : z.values) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return z;
}

Tensor<float> sample_latent_batch(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<float> values(n * dim);
  for (float& v : values) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return Tensor<float>({n, dim}, std::move(values));
}

Tensor<float> to_tensor(const LatentVector& z) {
  return Tensor<float>({1, z.size()}, z.values);
}

// -- shared helpers --------------------------------------------------------

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<T> v(shape_size(shape));
  for (T& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> own(const Tensor<T>& p) {
  if (!p.defined()) return p;
  Tensor<T> out = p.clone();
  out.set_requires_grad(p.requires_grad());
  return out;
}

template <typename T>
std::vector<Tensor<T>> own(const std::vector<Tensor<T>>& ps) {
  std::vector<Tensor<T>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(own(p));
  return out;
}

template <typename T>
Tensor<T> param(Shape shape, T fill = T(0)) {
  return Tensor<T>::full(std::move(shape), fill, true);
}

template <typename T>
Tensor<T> use(const Tensor<T>& p, const Pass& pass) {
  return pass.param_grads ? p : p.detach();
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
               RunningStats<T>& stats, const Pass& pass, bool update_stats) {
  if (pass.norm == BatchNormMode::infer) return batchnorm_infer(x, gamma, beta, stats);
  return batchnorm_train(x, gamma, beta, update_stats ? &stats : nullptr);
}

template <typename T>
NamedArray to_array(std::string name, const Tensor<T>& t) {
  auto d = t.data();
  return NamedArray{std::move(name), t.shape(), std::vector<float>(d.begin(), d.end())};
}

template <typename T>
NamedArray to_array(std::string name, const std::vector<T>& v) {
  return NamedArray{std::move(name), Shape{v.size()}, std::vector<float>(v.begin(), v.end())};
}

class ArrayLookup {
 public:
  explicit ArrayLookup(const std::vector<NamedArray>& arrays) {
    for (const NamedArray& a : arrays) by_name_[a.name] = &a;
  }

  const NamedArray& get(const std::string& name, const Shape& shape) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw FormatError("weights: missing array '" + name + "'");
    if (it->second->shape != shape) {
      throw FormatError("weights: array '" + name + "' has shape " +
                        shape_string(it->second->shape) + ", expected " + shape_string(shape));
    }
    if (it->second->data.size() != shape_size(shape)) {
      throw FormatError("weights: array '" + name + "' data length disagrees with its shape");
    }
    return *it->second;
  }

  template <typename T>
  void fill(const std::string& name, Tensor<T>& t) const {
    const NamedArray& a = get(name, t.shape());
    auto out = t.mutable_data();
    std::copy(a.data.begin(), a.data.end(), out.begin());
  }

  template <typename T>
  void fill(const std::string& name, std::vector<T>& v) const {
    const NamedArray& a = get(name, Shape{v.size()});
    std::copy(a.data.begin(), a.data.end(), v.begin());
  }

 private:
  std::map<std::string, const NamedArray*> by_name_;
};

template <typename U, typename T>
Tensor<U> cast_tensor(const Tensor<T>& t) {
  auto d = t.data();
  return Tensor<U>(t.shape(), std::vector<U>(d.begin(), d.end()), t.requires_grad());
}

template <typename U, typename T>
RunningStats<U> cast_stats(const RunningStats<T>& s) {
  RunningStats<U> out;
  out.mean.assign(s.mean.begin(), s.mean.end());
  out.var.assign(s.var.begin(), s.var.end());
  return out;
}

void check_input(const Shape& shape, std::size_t rank, const Shape& tail, const char* who) {
  bool ok = shape.size() == rank && shape[0] > 0;
  for (std::size_t i = 0; ok && i < tail.size(); ++i) ok = shape[i + 1] == tail[i];
  if (!ok) {
    std::string want = "[N";
    for (std::size_t e : tail) want += "," + std::to_string(e);
    throw DimensionError(std::string(who) + ": input shape " + shape_string(shape) +
                         ", expected " + want + "]");
  }
}

}  // namespace

// -- generator -------------------------------------------------------------

template <typename T>
Generator<T>::Generator(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  const std::size_t n = arch_.stages();
  const std::size_t k = arch_.kernel;
  const std::size_t c0 = arch_.max_channels;
  fc_weight_ = param<T>({arch_.latent_dim, 4 * 8 * c0});
  std::size_t in = c0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t out = arch_.generator_channels(i);
    kernels_.push_back(param<T>({k, k, out, in}));
    in = out;
  }
  out_bias_ = param<T>({3});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i == 0 ? c0 : arch_.generator_channels(i - 1);
    gamma_.push_back(param<T>({c}, T(1)));
    beta_.push_back(param<T>({c}));
    stats_.emplace_back(c);
  }
}

template <typename T>
Generator<T>::Generator(const Architecture& arch, Rng& rng) : Generator(arch) {
  fc_weight_ = normal_tensor<T>(fc_weight_.shape(), rng, 0.0, 0.02);
  for (auto& w : kernels_) w = normal_tensor<T>(w.shape(), rng, 0.0, 0.02);
  for (auto& g : gamma_) g = normal_tensor<T>(g.shape(), rng, 1.0, 0.02);
}

template <typename T>
Generator<T>::Generator(const Generator& other)
    : arch_(other.arch_),
      fc_weight_(own(other.fc_weight_)),
      kernels_(own(other.kernels_)),
      out_bias_(own(other.out_bias_)),
      gamma_(own(other.gamma_)),
      beta_(own(other.beta_)),
      stats_(other.stats_) {}

template <typename T>
Generator<T>& Generator<T>::operator=(const Generator& other) {
  if (this != &other) *this = Generator(other);
  return *this;
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& z, Pass pass) const {
  return const_cast<Generator*>(this)->run(z, pass, false);
}

template <typename T>
Tensor<T> Generator<T>::forward_train(const Tensor<T>& z) {
  return run(z, Pass{BatchNormMode::train, true}, true);
}

template <typename T>
Tensor<T> Generator<T>::run(const Tensor<T>& z, Pass pass, bool update_stats) {
  check_input(z.shape(), 2, {arch_.latent_dim}, "generator");
  const std::size_t batch = z.dim(0);
  const std::size_t n = arch_.stages();
  const T slope = static_cast<T>(arch_.lrelu_slope);

  Tensor<T> h = reshape(matmul(z, use(fc_weight_, pass)), {batch, 4, 8, arch_.max_channels});
  h = lrelu(norm(h, use(gamma_[0], pass), use(beta_[0], pass), stats_[0], pass, update_stats), slope);
  for (std::size_t i = 0; i < n; ++i) {
    h = conv2d_transpose(h, use(kernels_[i], pass), 2);
    if (i + 1 < n) {
      h = norm(h, use(gamma_[i + 1], pass), use(beta_[i + 1], pass), stats_[i + 1], pass,
               update_stats);
      h = lrelu(h, slope);
    } else {
      h = tanh(add_bias(h, use(out_bias_, pass)));
    }
  }
  return h;
}

template <typename T>
std::vector<Tensor<T>> Generator<T>::parameters() const {
  std::vector<Tensor<T>> out{fc_weight_};
  out.insert(out.end(), kernels_.begin(), kernels_.end());
  out.push_back(out_bias_);
  out.insert(out.end(), gamma_.begin(), gamma_.end());
  out.insert(out.end(), beta_.begin(), beta_.end());
  return out;
}

template <typename T>
std::vector<NamedArray> Generator<T>::export_arrays() const {
  std::vector<NamedArray> out;
  out.push_back(to_array("g.fc.weight", fc_weight_));
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    out.push_back(to_array("g.up" + std::to_string(i) + ".kernel", kernels_[i]));
  }
  out.push_back(to_array("g.out.bias", out_bias_));
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    const std::string p = "g.bn" + std::to_string(i);
    out.push_back(to_array(p + ".gamma", gamma_[i]));
    out.push_back(to_array(p + ".beta", beta_[i]));
    out.push_back(to_array(p + ".mean", stats_[i].mean));
    out.push_back(to_array(p + ".var", stats_[i].var));
  }
  return out;
}

template <typename T>
void Generator<T>::import_arrays(const std::vector<NamedArray>& arrays) {
  const ArrayLookup lookup(arrays);
  lookup.fill("g.fc.weight", fc_weight_);
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    lookup.fill("g.up" + std::to_string(i) + ".kernel", kernels_[i]);
  }
  lookup.fill("g.out.bias", out_bias_);
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    const std::string p = "g.bn" + std::to_string(i);
    lookup.fill(p + ".gamma", gamma_[i]);
    lookup.fill(p + ".beta", beta_[i]);
    lookup.fill(p + ".mean", stats_[i].mean);
    lookup.fill(p + ".var", stats_[i].var);
  }
}

template <typename T>
template <typename U>
Generator<U> Generator<T>::cast() const {
  Generator<U> out;
  out.arch_ = arch_;
  out.fc_weight_ = cast_tensor<U>(fc_weight_);
  for (const auto& t : kernels_) out.kernels_.push_back(cast_tensor<U>(t));
  out.out_bias_ = cast_tensor<U>(out_bias_);
  for (const auto& t : gamma_) out.gamma_.push_back(cast_tensor<U>(t));
  for (const auto& t : beta_) out.beta_.push_back(cast_tensor<U>(t));
  for (const auto& s : stats_) out.stats_.push_back(cast_stats<U>(s));
  return out;
}

// -- discriminator ---------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  const std::size_t n = arch_.stages();
  const std::size_t k = arch_.kernel;
  std::size_t in = 3;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t out = arch_.discriminator_channels(i);
    kernels_.push_back(param<T>({k, k, in, out}));
    if (i > 0) {
      gamma_.push_back(param<T>({out}, T(1)));
      beta_.push_back(param<T>({out}));
      stats_.emplace_back(out);
    }
    in = out;
  }
  first_bias_ = param<T>({arch_.discriminator_channels(0)});
  fc_weight_ = param<T>({4 * 8 * arch_.max_channels, 1});
  fc_bias_ = param<T>({1});
}

template <typename T>
Discriminator<T>::Discriminator(const Architecture& arch, Rng& rng) : Discriminator(arch) {
  for (auto& w : kernels_) w = normal_tensor<T>(w.shape(), rng, 0.0, 0.02);
  for (auto& g : gamma_) g = normal_tensor<T>(g.shape(), rng, 1.0, 0.02);
  fc_weight_ = normal_tensor<T>(fc_weight_.shape(), rng, 0.0, 0.02);
}

template <typename T>
Discriminator<T>::Discriminator(const Discriminator& other)
    : arch_(other.arch_),
      kernels_(own(other.kernels_)),
      first_bias_(own(other.first_bias_)),
      gamma_(own(other.gamma_)),
      beta_(own(other.beta_)),
      stats_(other.stats_),
      fc_weight_(own(other.fc_weight_)),
      fc_bias_(own(other.fc_bias_)) {}

template <typename T>
Discriminator<T>& Discriminator<T>::operator=(const Discriminator& other) {
  if (this != &other) *this = Discriminator(other);
  return *this;
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& x, Pass pass) const {
  return const_cast<Discriminator*>(this)->run(x, pass, false);
}

template <typename T>
Tensor<T> Discriminator<T>::forward_train(const Tensor<T>& x) {
  return run(x, Pass{BatchNormMode::train, true}, true);
}

template <typename T>
Tensor<T> Discriminator<T>::run(const Tensor<T>& x, Pass pass, bool update_stats) {
  check_input(x.shape(), 4, {arch_.height, arch_.width, 3}, "discriminator");
  const std::size_t batch = x.dim(0);
  const T slope = static_cast<T>(arch_.lrelu_slope);
  Tensor<T> h = x;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    h = conv2d(h, use(kernels_[i], pass), 2, Padding::same);
    if (i == 0) {
      h = add_bias(h, use(first_bias_, pass));
    } else {
      h = norm(h, use(gamma_[i - 1], pass), use(beta_[i - 1], pass), stats_[i - 1], pass,
               update_stats);
    }
    h = lrelu(h, slope);
  }
  h = reshape(h, {batch, 4 * 8 * arch_.max_channels});
  h = add_bias(matmul(h, use(fc_weight_, pass)), use(fc_bias_, pass));
  return reshape(h, {batch});
}

template <typename T>
std::vector<Tensor<T>> Discriminator<T>::parameters() const {
  std::vector<Tensor<T>> out(kernels_.begin(), kernels_.end());
  out.push_back(first_bias_);
  out.insert(out.end(), gamma_.begin(), gamma_.end());
  out.insert(out.end(), beta_.begin(), beta_.end());
  out.push_back(fc_weight_);
  out.push_back(fc_bias_);
  return out;
}

template <typename T>
std::vector<NamedArray> Discriminator<T>::export_arrays() const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    out.push_back(to_array("d.conv" + std::to_string(i) + ".kernel", kernels_[i]));
  }
  out.push_back(to_array("d.conv0.bias", first_bias_));
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    const std::string p = "d.bn" + std::to_string(i + 1);
    out.push_back(to_array(p + ".gamma", gamma_[i]));
    out.push_back(to_array(p + ".beta", beta_[i]));
    out.push_back(to_array(p + ".mean", stats_[i].mean));
    out.push_back(to_array(p + ".var", stats_[i].var));
  }
  out.push_back(to_array("d.fc.weight", fc_weight_));
  out.push_back(to_array("d.fc.bias", fc_bias_));
  return out;
}

template <typename T>
void Discriminator<T>::import_arrays(const std::vector<NamedArray>& arrays) {
  const ArrayLookup lookup(arrays);
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    lookup.fill("d.conv" + std::to_string(i) + ".kernel", kernels_[i]);
  }
  lookup.fill("d.conv0.bias", first_bias_);
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    const std::string p = "d.bn" + std::to_string(i + 1);
    lookup.fill(p + ".gamma", gamma_[i]);
    lookup.fill(p + ".beta", beta_[i]);
    lookup.fill(p + ".mean", stats_[i].mean);
    lookup.fill(p + ".var", stats_[i].var);
  }
  lookup.fill("d.fc.weight", fc_weight_);
  lookup.fill("d.fc.bias", fc_bias_);
}

template <typename T>
template <typename U>
Discriminator<U> Discriminator<T>::cast() const {
  Discriminator<U> out;
  out.arch_ = arch_;
  for (const auto& t : kernels_) out.kernels_.push_back(cast_tensor<U>(t));
  out.first_bias_ = cast_tensor<U>(first_bias_);
  for (const auto& t : gamma_) out.gamma_.push_back(cast_tensor<U>(t));
  for (const auto& t : beta_) out.beta_.push_back(cast_tensor<U>(t));
  for (const auto& s : stats_) out.stats_.push_back(cast_stats<U>(s));
  out.fc_weight_ = cast_tensor<U>(fc_weight_);
  out.fc_bias_ = cast_tensor<U>(fc_bias_);
  return out;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template Generator<double> Generator<float>::cast<double>() const;
template Generator<float> Generator<float>::cast<float>() const;
template Discriminator<double> Discriminator<float>::cast<double>() const;
template Discriminator<float> Discriminator<float>::cast<float>() const;

Tensor<float> generate(const Generator<float>& g, const LatentVector& z) {
  if (z.size() != g.architecture().latent_dim) {
    throw DimensionError("generate: latent has " + std::to_string(z.size()) +
                         " components, generator expects " +
                         std::to_string(g.architecture().latent_dim));
  }
  return g.forward(to_tensor(z));
}

float discriminate(const Discriminator<float>& d, const Tensor<float>& x) {
  const Tensor<float> batch = x.rank() == 3 ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  return d.forward(batch).at(0);
}

// -- bundle ----------------------------------------------------------------

void to_json(nlohmann::json& j, const TrainingMetadata& m) {
  j = nlohmann::json{{"steps", m.steps},
                     {"epochs", m.epochs},
                     {"seed", m.seed},
                     {"style_history", m.style_history}};
}

void from_json(const nlohmann::json& j, TrainingMetadata& m) {
  m.steps = j.value("steps", std::int64_t{0});
  m.epochs = j.value("epochs", std::int64_t{0});
  m.seed = j.value("seed", std::uint64_t{0});
  m.style_history = j.value("style_history", std::vector<std::string>{});
}

ModelBundle ModelBundle::initialize(const Architecture& arch, std::uint64_t seed,
                                    std::string style) {
  Rng g_rng = make_rng(seed, {0x6e});
  Rng d_rng = make_rng(seed, {0x64});
  ModelBundle b;
  b.arch = arch;
  b.style = std::move(style);
  b.metadata.seed = seed;
  b.generator = Generator<float>(arch, g_rng);
  b.discriminator = Discriminator<float>(arch, d_rng);
  return b;
}

nlohmann::json ModelBundle::descriptor() const {
  return nlohmann::json{{"architecture", arch}, {"style", style}, {"metadata", metadata}};
}

std::vector<NamedArray> ModelBundle::export_arrays() const {
  std::vector<NamedArray> out = generator.export_arrays();
  std::vector<NamedArray> d = discriminator.export_arrays();
  out.insert(out.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
  return out;
}

std::uint64_t ModelBundle::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const NamedArray& a : export_arrays()) {
    mix(a.name.data(), a.name.size());
    mix(a.data.data(), a.data.size() * sizeof(float));
  }
  return h;
}

bool operator==(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.arch == b.arch && a.style == b.style && a.metadata == b.metadata)) return false;
  const auto xs = a.export_arrays();
  const auto ys = b.export_arrays();
  if (xs.size() != ys.size()) return false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].name != ys[i].name || xs[i].shape != ys[i].shape) return false;
    if (std::memcmp(xs[i].data.data(), ys[i].data.data(), xs[i].data.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace ctxgan
