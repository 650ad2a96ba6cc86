#include "ctxgan/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctxgan/errors.hpp"
#include "ctxgan/ops.hpp"
#include "ctxgan/optim.hpp"

namespace ctxgan {

void ProjectionConfig::validate() const {
  if (!(lambda >= 0.0)) throw ArgumentError("projection: lambda must be non-negative");
  if (init_candidates == 0) throw ArgumentError("projection: init_candidates must be at least 1");
  if (iterations < 0) throw ArgumentError("projection: iterations must be non-negative");
  if (!(step_size > 0.0)) throw ArgumentError("projection: step_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("projection: momentum must lie in [0,1)");
  if (!(kl_epsilon > 0.0 && kl_epsilon < 0.5)) throw ArgumentError("projection: kl_epsilon must lie in (0,0.5)");
  if (!(perceptual_epsilon > 0.0)) throw ArgumentError("projection: perceptual_epsilon must be positive");
  if (frame_every < 0 || progress_every <= 0) {
    throw ArgumentError("projection: frame_every must be >= 0 and progress_every > 0");
  }
}

void to_json(nlohmann::json& j, const ProjectionConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"momentum", c.momentum},
                     {"step_size", c.step_size},
                     {"iterations", c.iterations},
                     {"init_candidates", c.init_candidates},
                     {"clipping", c.clipping == Clipping::stochastic ? "stochastic" : "hard"},
                     {"direction", to_string(c.direction)},
                     {"seed", c.seed},
                     {"kl", c.kl == KlConvention::mass ? "mass" : "bernoulli"},
                     {"kl_epsilon", c.kl_epsilon},
                     {"perceptual_epsilon", c.perceptual_epsilon},
                     {"frame_every", c.frame_every},
                     {"progress_every", c.progress_every}};
}

void from_json(const nlohmann::json& j, ProjectionConfig& c) {
  const ProjectionConfig d;
  c.lambda = j.value("lambda", d.lambda);
  c.momentum = j.value("momentum", d.momentum);
  c.step_size = j.value("step_size", d.step_size);
  c.iterations = j.value("iterations", d.iterations);
  c.init_candidates = j.value("init_candidates", d.init_candidates);
  const std::string clip = j.value("clipping", std::string("stochastic"));
  if (clip != "stochastic" && clip != "hard") throw ArgumentError("unknown clipping '" + clip + "'");
  c.clipping = clip == "hard" ? Clipping::hard : Clipping::stochastic;
  c.direction = parse_direction(j.value("direction", std::string(to_string(d.direction))));
  c.seed = j.value("seed", d.seed);
  const std::string kl = j.value("kl", std::string("mass"));
  if (kl != "mass" && kl != "bernoulli") throw ArgumentError("unknown kl convention '" + kl + "'");
  c.kl = kl == "bernoulli" ? KlConvention::bernoulli : KlConvention::mass;
  c.kl_epsilon = j.value("kl_epsilon", d.kl_epsilon);
  c.perceptual_epsilon = j.value("perceptual_epsilon", d.perceptual_epsilon);
  c.frame_every = j.value("frame_every", d.frame_every);
  c.progress_every = j.value("progress_every", d.progress_every);
}

// -- objective -------------------------------------------------------------

namespace {

// Stroke mass of a [-1,1] value; values above +1 carry no mass.
double stroke(double v) { return std::max((1.0 - v) * 0.5, 0.0); }

}  // namespace

template <typename T>
Tensor<T> contextual_loss(const Tensor<T>& y, const Tensor<T>& gz, const Mask& mask,
                          KlConvention kl, double epsilon) {
  const std::size_t expected = mask.values.pixels.size() * 3;
  if (y.size() != expected || gz.size() != expected) {
    throw DimensionError("contextual_loss: y " + shape_string(y.shape()) + " and gz " +
                         shape_string(gz.shape()) + " must both hold the mask's " +
                         std::to_string(mask.values.height) + "x" +
                         std::to_string(mask.values.width) + "x3 values");
  }
  const std::vector<std::size_t> idx = mask_indices(mask);
  if (idx.empty()) throw ArgumentError("contextual_loss: the mask selects nothing");
  const auto ys = y.data();
  const auto gs = gz.data();
  const std::size_t n = idx.size();

  double loss = 0.0;
  std::vector<T> coef(n);  // d loss / d gz at each masked element
  if (kl == KlConvention::mass) {
    std::vector<double> sp(n), sq(n);
    double total_p = 0.0, total_q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sp[i] = stroke(ys[idx[i]]) + epsilon;
      sq[i] = stroke(gs[idx[i]]) + epsilon;
      total_p += sp[i];
      total_q += sq[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sp[i] / total_p;
      const double q = sq[i] / total_q;
      if (p != q) loss += p * std::log(p / q);
      // d/d sq_i of [-sum p log sq + log sum sq] is -p_i/sq_i + 1/S_q, and
      // d sq / d v = -1/2 inside the unclamped range.
      const double dv = gs[idx[i]] <= 1.0 ? -0.5 : 0.0;
      coef[i] = static_cast<T>((-p / sq[i] + 1.0 / total_q) * dv);
    }
  } else {
    const auto prob = [epsilon](double v) { return std::clamp(stroke(v), epsilon, 1.0 - epsilon); };
    for (std::size_t i = 0; i < n; ++i) {
      const double p = prob(ys[idx[i]]);
      const double q = prob(gs[idx[i]]);
      if (p != q) loss += p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
      const double raw = stroke(gs[idx[i]]);
      const double dv = raw > epsilon && raw < 1.0 - epsilon ? -0.5 : 0.0;
      coef[i] = static_cast<T>((-p / q + (1.0 - p) / (1.0 - q)) * dv / static_cast<double>(n));
    }
    loss /= static_cast<double>(n);
  }
  // Summation noise can leave a tiny negative value on near-equal inputs.
  loss = std::max(loss, 0.0);

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = Shape{};
  node->data = std::make_shared<std::vector<T>>(1, static_cast<T>(loss));
  if (gz.requires_grad()) {
    node->requires_grad = true;
    node->parents.push_back(gz.node());
    node->backward = [idx, coef = std::move(coef)](detail::Node<T>& self) {
      auto& g = self.parents[0]->grad_buffer();
      const T up = self.grad[0];
      for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += up * coef[i];
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> perceptual_loss(const Discriminator<T>& d, const Tensor<T>& gz, double epsilon) {
  const Tensor<T> batch = gz.rank() == 3 ? reshape(gz, {1, gz.dim(0), gz.dim(1), gz.dim(2)}) : gz;
  const Tensor<T> fake_prob = sigmoid(affine(d.forward(batch), T(-1)));
  return mean(log(affine(fake_prob, T(1), static_cast<T>(epsilon))));
}

template Tensor<float> contextual_loss(const Tensor<float>&, const Tensor<float>&, const Mask&,
                                       KlConvention, double);
template Tensor<double> contextual_loss(const Tensor<double>&, const Tensor<double>&, const Mask&,
                                        KlConvention, double);
template Tensor<float> perceptual_loss(const Discriminator<float>&, const Tensor<float>&, double);
template Tensor<double> perceptual_loss(const Discriminator<double>&, const Tensor<double>&, double);

double contextual_value(const Image& y, const Image& gz, const Mask& mask, KlConvention kl,
                        double epsilon) {
  const Tensor<double> a({y.pixels.size()}, std::vector<double>(y.pixels.begin(), y.pixels.end()));
  const Tensor<double> b({gz.pixels.size()}, std::vector<double>(gz.pixels.begin(), gz.pixels.end()));
  return contextual_loss(a, b, mask, kl, epsilon).item();
}

// -- procedure -------------------------------------------------------------

InitResult initialize(const Image& y, const Mask& mask, const Generator<float>& g, std::size_t n,
                      Rng& rng, KlConvention kl, double epsilon) {
  if (n == 0) throw ArgumentError("initialize: need at least one candidate");
  InitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    LatentVector z = sample_latent(rng, g.architecture().latent_dim);
    const Image render = from_tensor(generate(g, z));
    const double loss = contextual_value(y, render, mask, kl, epsilon);
    out.losses.push_back(loss);
    if (i == 0 || loss < out.losses[out.index]) {
      out.index = i;
      out.z = std::move(z);
    }
  }
  return out;
}

LatentVector stochastic_clip(const LatentVector& z, Rng& rng) {
  LatentVector out = z;
  for (float& v : out.values) {
    if (!(v >= -1.0f && v <= 1.0f)) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  }
  return out;
}

LatentVector hard_clip(const LatentVector& z) {
  LatentVector out = z;
  for (float& v : out.values) v = std::isnan(v) ? 0.0f : std::clamp(v, -1.0f, 1.0f);
  return out;
}

Image composite(const Image& y, const Mask& mask, const Image& gz) {
  if (y.height != gz.height || y.width != gz.width || y.channels != gz.channels ||
      mask.values.height != y.height || mask.values.width != y.width) {
    throw DimensionError("composite: y, mask and render must share their spatial size");
  }
  Image out = gz;
  for (std::size_t p = 0; p < y.height * y.width; ++p) {
    if (mask.values.pixels[p] != 0.0f) {
      for (std::size_t c = 0; c < y.channels; ++c) out.pixels[p * y.channels + c] = y.pixels[p * y.channels + c];
    }
  }
  return out;
}

ProjectionResult project(const Image& y, const Mask& mask, const ModelBundle& bundle,
                         const ProjectionConfig& config, const ProgressFn& progress) {
  config.validate();
  const Architecture& arch = bundle.arch;
  if (y.height != arch.height || y.width != arch.width || y.channels != 3) {
    throw DimensionError("project: y is " + std::to_string(y.height) + "x" + std::to_string(y.width) +
                         "x" + std::to_string(y.channels) + ", bundle expects " + arch.resolution() +
                         "x3");
  }
  const Generator<float>& g = bundle.generator;
  const Discriminator<float>& d = bundle.discriminator;

  Rng init_rng = make_rng(config.seed, {0x696e6974});
  Rng clip_rng = make_rng(config.seed, {0x636c6970});
  ProjectionResult result;
  result.init = initialize(y, mask, g, config.init_candidates, init_rng, config.kl, config.kl_epsilon);
  LatentVector z = result.init.z;

  const Tensor<float> yt = to_tensor(y);
  const std::size_t sizes[] = {z.size()};
  MomentumState<float> state =
      make_momentum_state<float>(sizes, MomentumOptions{config.step_size, config.momentum});
  const auto lambda = static_cast<float>(config.lambda);

  for (std::int64_t it = 0;; ++it) {
    Tensor<float> zt({1, z.size()}, z.values, true);
    const Tensor<float> gz = g.forward(zt);
    const Tensor<float> ctx = contextual_loss(yt, gz, mask, config.kl, config.kl_epsilon);
    const Tensor<float> perc = perceptual_loss(d, gz, config.perceptual_epsilon);
    const Tensor<float> total = add(ctx, affine(perc, lambda));
    result.trace.rows.push_back(TraceRow{it, ctx.item(), perc.item(), total.item()});
    result.trace.latents.push_back(z);

    const bool last = it == config.iterations;
    const bool want_frame = config.frame_every > 0 && (it % config.frame_every == 0 || last);
    const bool want_event = progress && it > 0 && (it % config.progress_every == 0 || last);
    if (want_frame || want_event) {
      const Image preview = composite(y, mask, from_tensor(gz));
      if (want_event) progress(ProgressEvent{it, ctx.item(), perc.item(), &preview});
      if (want_frame) result.trace.frames.emplace_back(it, preview);
    }
    if (last) break;

    backward(total);
    momentum_step<float>(std::span<float>(z.values), zt.grad(), state);
    z = config.clipping == Clipping::stochastic ? stochastic_clip(z, clip_rng) : hard_clip(z);
  }
  result.z = std::move(z);
  return result;
}

JointImage corrupted_joint(const Image& input, Direction direction, std::size_t resolution) {
  if (input.height != resolution || input.width != resolution) {
    throw DimensionError("complete: input is " + std::to_string(input.height) + "x" +
                         std::to_string(input.width) + " but the bundle's context half is " +
                         std::to_string(resolution) + "x" + std::to_string(resolution));
  }
  const Image blank(resolution, resolution, 3, 0.0f);
  if (direction == Direction::sketch_to_image) {
    const Image halves[] = {to_rgb(to_gray(input)), blank};
    return JointImage{hconcat(halves)};
  }
  const Image halves[] = {blank, to_rgb(input)};
  return JointImage{hconcat(halves)};
}

Completion complete(const Image& input, const ModelBundle& bundle, const ProjectionConfig& config,
                    const ProgressFn& progress) {
  const std::size_t r = bundle.arch.height;
  Completion out;
  out.input = corrupted_joint(input, config.direction, r);
  out.mask = make_mask(config.direction, r, bundle.arch.half_width());
  out.projection = project(out.input.pixels, out.mask, bundle, config, progress);
  out.output = composite(out.input.pixels, out.mask, from_tensor(generate(bundle.generator, out.projection.z)));
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const ProjectionTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,contextual,perceptual,total\n";
  char line[128];
  for (const TraceRow& r : trace.rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(r.iter),
                  r.contextual, r.perceptual, r.total);
    out << line;
  }
}

std::vector<std::filesystem::path> write_frames(const std::filesystem::path& dir,
                                                const std::string& stem,
                                                const ProjectionTrace& trace) {
  std::vector<std::filesystem::path> files;
  if (trace.frames.empty()) return files;
  std::filesystem::create_directories(dir);
  std::vector<Image> strip;
  for (const auto& [iter, frame] : trace.frames) {
    char name[64];
    std::snprintf(name, sizeof name, "_%05lld.png", static_cast<long long>(iter));
    files.push_back(dir / (stem + name));
    write_png(files.back(), frame);
    strip.push_back(frame);
  }
  files.push_back(dir / (stem + "_strip.png"));
  write_png(files.back(), hconcat(strip));
  return files;
}

}  // namespace ctxgan
