// Acceptance run: one PASS/FAIL line per primary criterion. Trains the toy
// bundle unless --bundle points at an existing one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ctxgan/bundle_io.hpp"
#include "ctxgan/eval.hpp"
#include "ctxgan/projection.hpp"
#include "ctxgan/training.hpp"
#include "support/gradcheck.hpp"

using namespace ctxgan;
using ctxgan::testing::grad_check;
using ctxgan::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The toy setting: 32x64 joints of procedural shapes.
struct Toy {
  Architecture arch;
  CorpusSpec train_spec;
  CorpusSpec held_spec;
  TrainConfig train;

  Toy() {
    arch = Architecture::desk_scale();
    arch.max_channels = 64;
    train_spec.count = 1000;
    train_spec.seed = 11;
    held_spec.count = 50;
    held_spec.seed = 999;  // disjoint draws from the training corpus
    held_spec.crops = 1;
    held_spec.flip = false;
    held_spec.crop_fraction = 1.0;
    train.batch_size = 32;
    train.seed = 1;
    train.max_steps = 3000;
  }
};

Image from_pixels(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  Image img(h, w, c);
  for (float& v : img.pixels) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return img;
}

bool bitwise_equal(const Image& a, const Image& b) {
  return a.height == b.height && a.width == b.width && a.channels == b.channels &&
         std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0;
}

// -- criteria ------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  using V = std::vector<Tensor<double>>;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  std::map<std::string, double> worst;
  std::map<std::string, int> shapes;
  const auto record = [&](const std::string& op, double err) {
    worst[op] = std::max(worst[op], err);
    ++shapes[op];
  };
  const auto rand_shape = [&](std::size_t rank) {
    Shape s(rank);
    for (auto& d : s) d = dim(rng);
    return s;
  };

  for (int trial = 0; trial < 5; ++trial) {
    const Shape s = rand_shape(1 + trial % 4);
    auto a = random_tensor<double>(s, rng), b = random_tensor<double>(s, rng);
    auto pos = random_tensor<double>(s, rng, 0.2, 2.0);
    auto nz = random_tensor<double>(s, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < nz.size(); ++i) {
      if (i % 2) nz.mutable_data()[i] = -nz.data()[i];
    }
    record("add", grad_check([](const V& v) { return add(v[0], v[1]); }, {a, b}, rng).relative_error);
    record("sub", grad_check([](const V& v) { return sub(v[0], v[1]); }, {a, b}, rng).relative_error);
    record("mul", grad_check([](const V& v) { return mul(v[0], v[1]); }, {a, b}, rng).relative_error);
    record("affine", grad_check([](const V& v) { return affine(v[0], 0.7, -0.3); }, {a}, rng).relative_error);
    record("lrelu", grad_check([](const V& v) { return lrelu(v[0], 0.2); }, {nz}, rng).relative_error);
    record("tanh", grad_check([](const V& v) { return tanh(v[0]); }, {a}, rng).relative_error);
    record("sigmoid", grad_check([](const V& v) { return sigmoid(v[0]); }, {a}, rng).relative_error);
    record("softplus", grad_check([](const V& v) { return softplus(v[0]); }, {a}, rng).relative_error);
    record("log", grad_check([](const V& v) { return log(v[0]); }, {pos}, rng).relative_error);
    record("log_clamped", grad_check([](const V& v) { return log_clamped(v[0], 0.05); }, {pos}, rng).relative_error);
    record("sum", grad_check([](const V& v) { return sum(v[0]); }, {a}, rng).relative_error);
    record("mean", grad_check([](const V& v) { return mean(v[0]); }, {a}, rng).relative_error);
    record("reshape", grad_check([](const V& v) { return reshape(v[0], {v[0].size()}); }, {a}, rng).relative_error);
    auto bias = random_tensor<double>({s.back()}, rng);
    record("add_bias", grad_check([](const V& v) { return add_bias(v[0], v[1]); }, {a, bias}, rng).relative_error);
    auto scalar = random_tensor<double>({}, rng);
    record("mul_scalar", grad_check([](const V& v) { return mul_scalar(v[0], v[1]); }, {a, scalar}, rng).relative_error);

    const Shape ms = rand_shape(2);
    auto m1 = random_tensor<double>(ms, rng), m2 = random_tensor<double>({ms[1], dim(rng)}, rng);
    record("matmul", grad_check([](const V& v) { return matmul(v[0], v[1]); }, {m1, m2}, rng).relative_error);

    Shape cs = rand_shape(3);
    cs[1] += 1;
    auto c1 = random_tensor<double>(cs, rng);
    Shape cs2 = cs;
    cs2[1] = dim(rng);
    auto c2 = random_tensor<double>(cs2, rng);
    record("concat", grad_check([](const V& v) {
             const Tensor<double> parts[] = {v[0], v[1]};
             return concat<double>(parts, 1);
           }, {c1, c2}, rng).relative_error);
    record("slice", grad_check([](const V& v) { return slice(v[0], 1, 1, v[0].dim(1)); }, {c1}, rng).relative_error);
    const std::vector<std::size_t> idx = {0, c1.size() - 1, c1.size() / 2, 0};
    record("gather", grad_check([idx](const V& v) { return gather<double>(v[0], idx); }, {c1}, rng).relative_error);

    const std::size_t n = dim(rng), h = 2 + 2 * dim(rng), w = 2 + 2 * dim(rng), c = dim(rng), f = dim(rng);
    const std::size_t k = trial % 2 ? 5 : 3, stride = 1 + trial % 2;
    auto x = random_tensor<double>({n, h, w, c}, rng);
    auto kern = random_tensor<double>({k, k, c, f}, rng);
    record("conv2d", grad_check([stride](const V& v) { return conv2d(v[0], v[1], stride, Padding::same); },
                                {x, kern}, rng).relative_error);
    auto kv = random_tensor<double>({3, 3, c, f}, rng);
    record("conv2d", grad_check([stride](const V& v) { return conv2d(v[0], v[1], stride, Padding::valid); },
                                {x, kv}, rng).relative_error);
    auto xt = random_tensor<double>({n, h / 2, w / 2, c}, rng);
    auto kt = random_tensor<double>({k, k, f, c}, rng);
    record("conv2d_transpose", grad_check([stride](const V& v) { return conv2d_transpose(v[0], v[1], stride); },
                                          {xt, kt}, rng).relative_error);
    auto xb = random_tensor<double>({n + 1, h, w, c}, rng, -2, 3);
    auto gamma = random_tensor<double>({c}, rng, 0.5, 1.5), beta = random_tensor<double>({c}, rng);
    record("batchnorm_train", grad_check([](const V& v) {
             return batchnorm_train(v[0], v[1], v[2], static_cast<RunningStats<double>*>(nullptr));
           }, {xb, gamma, beta}, rng).relative_error);
    RunningStats<double> stats(c);
    for (auto& m : stats.mean) m = 0.1 * static_cast<double>(trial);
    for (auto& sv : stats.var) sv = 0.5 + static_cast<double>(trial);
    record("batchnorm_infer", grad_check([stats](const V& v) { return batchnorm_infer(v[0], v[1], v[2], stats); },
                                         {xb, gamma, beta}, rng).relative_error);

    // the fused contextual op, on a joint of random size
    const std::size_t half = 2 + dim(rng), rows = 2 + dim(rng);
    const Mask mask = make_mask(trial % 2 ? Direction::image_to_sketch : Direction::sketch_to_image, rows, half);
    auto y = random_tensor<double>({1, rows, 2 * half, 3}, rng);
    auto g = random_tensor<double>({1, rows, 2 * half, 3}, rng);
    record("contextual_loss", grad_check([y, mask](const V& v) { return contextual_loss(y, v[0], mask); },
                                         {g}, rng).relative_error);
  }

  // end to end: d(total)/dz of a small untrained model in 32-bit against a
  // 64-bit finite-difference oracle
  Architecture small;
  small.height = 16;
  small.width = 32;
  small.latent_dim = 8;
  small.max_channels = 16;
  const ModelBundle bundle = ModelBundle::initialize(small, 5);
  const Generator<double> g64 = bundle.generator.cast<double>();
  const Discriminator<double> d64 = bundle.discriminator.cast<double>();
  Rng r = make_rng(6);
  const Mask mask = make_mask(Direction::sketch_to_image, 16, 16);
  const Image y = from_pixels(16, 32, 3, r);
  const LatentVector z0 = sample_latent(r, 8);
  const double lambda = 0.5;
  Tensor<float> z({1, 8}, z0.values, true);
  const Tensor<float> gz = bundle.generator.forward(z);
  backward(add(contextual_loss(to_tensor(y), gz, mask),
               affine(perceptual_loss(bundle.discriminator, gz), static_cast<float>(lambda))));
  const Tensor<double> y64({1, 16, 32, 3}, std::vector<double>(y.pixels.begin(), y.pixels.end()));
  const auto total = [&](const std::vector<double>& zz) {
    const Tensor<double> out = g64.forward(Tensor<double>({1, 8}, zz));
    return contextual_loss(y64, out, mask).item() + lambda * perceptual_loss(d64, out).item();
  };
  double e2e = 0.0;
  for (int dir_trial = 0; dir_trial < 3; ++dir_trial) {
    std::vector<double> dir(8);
    for (double& v : dir) v = uniform(r, -1.0, 1.0);
    std::vector<double> plus(z0.values.begin(), z0.values.end()), minus = plus;
    for (std::size_t i = 0; i < 8; ++i) {
      plus[i] += 1e-5 * dir[i];
      minus[i] -= 1e-5 * dir[i];
    }
    const double numeric = (total(plus) - total(minus)) / 2e-5;
    double analytic = 0.0;
    for (std::size_t i = 0; i < 8; ++i) analytic += z.grad()[i] * dir[i];
    e2e = std::max(e2e, std::abs(analytic - numeric) / std::abs(numeric));
  }

  double max_err = 0.0;
  std::string worst_op;
  int min_shapes = 1 << 30;
  for (const auto& [op, err] : worst) {
    if (err >= max_err) {
      max_err = err;
      worst_op = op;
    }
    min_shapes = std::min(min_shapes, shapes[op]);
  }
  const double elapsed = seconds_since(t0);
  return {max_err < 1e-4 && min_shapes >= 5 && e2e < 1e-3 && elapsed < 120.0,
          fmt("%zu ops, >=%d shapes each, worst rel err %.2e (%s); end-to-end dz rel err %.2e; %.1fs",
              worst.size(), min_shapes, max_err, worst_op.c_str(), e2e, elapsed)};
}

Outcome objective_identities(const ModelBundle& bundle, const Corpus& held) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(77);
  const std::size_t r = bundle.arch.height, half = bundle.arch.half_width();
  bool locality = true, nonneg = true, zero_eq = true, trace_ok = true, composite_ok = true;
  double min_kl = 1e300, max_self = 0.0, max_trace = 0.0;
  for (Direction dir : {Direction::sketch_to_image, Direction::image_to_sketch}) {
    const Mask mask = make_mask(dir, r, half);
    for (int t = 0; t < 10; ++t) {
      const Image y = from_pixels(r, 2 * half, 3, rng), g = from_pixels(r, 2 * half, 3, rng);
      const double base = contextual_value(y, g, mask);
      Image g2 = g, y2 = y;
      for (std::size_t i = 0; i < g2.pixels.size(); ++i) {
        if (mask.values.pixels[i / 3] == 0.0f) {
          g2.pixels[i] = static_cast<float>(uniform(rng, -1, 1));
          y2.pixels[i] = static_cast<float>(uniform(rng, -1, 1));
        }
      }
      locality &= contextual_value(y2, g2, mask) == base;
      min_kl = std::min(min_kl, base);
      nonneg &= base >= -1e-12;
      const double self = contextual_value(y, y, mask);
      max_self = std::max(max_self, std::abs(self));
      zero_eq &= std::abs(self) <= 1e-12;

      const Image out = composite(y, mask, g);
      for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const float expect = mask.values.pixels[i / 3] != 0.0f ? y.pixels[i] : g.pixels[i];
        composite_ok &= std::memcmp(&out.pixels[i], &expect, sizeof(float)) == 0;
      }
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    ProjectionConfig cfg;
    cfg.iterations = 100;
    cfg.seed = 300 + i;
    cfg.lambda = 0.01 * static_cast<double>(i + 1);
    const Completion c = complete(held.base_pair(i).sketch, bundle, cfg);
    for (const TraceRow& row : c.projection.trace.rows) {
      const double err = std::abs(row.total - (row.contextual + cfg.lambda * row.perceptual));
      max_trace = std::max(max_trace, err);
      trace_ok &= err <= 1e-6;
    }
    const Image gz = from_tensor(generate(bundle.generator, c.projection.z));
    composite_ok &= bitwise_equal(c.output, composite(c.input.pixels, c.mask, gz));
  }
  const double elapsed = seconds_since(t0);
  return {locality && nonneg && zero_eq && trace_ok && composite_ok && elapsed < 60.0,
          fmt("locality %s, min KL %.3e, |KL(y,y)| <= %.1e, trace identity err %.1e, composite %s; %.1fs",
              locality ? "exact" : "BROKEN", min_kl, max_self, max_trace,
              composite_ok ? "bitwise" : "MISMATCH", elapsed)};
}

Outcome projection_behavior(const ModelBundle& bundle, const Corpus& held, std::optional<double> train_secs) {
  const bool budget = bundle.metadata.steps >= 2000 && train_secs && *train_secs < 1800.0;
  const std::string trained =
      train_secs ? fmt("toy trained %lld steps in %.0fs", static_cast<long long>(bundle.metadata.steps), *train_secs)
                 : fmt("toy trained %lld steps, training time not recorded",
                       static_cast<long long>(bundle.metadata.steps));
  int improved = 0, runs = 0;
  bool in_range = true;
  double slowest = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    ProjectionConfig cfg;
    cfg.seed = 1000 + i;
    const auto t0 = std::chrono::steady_clock::now();
    const Completion c = complete(held.base_pair(i).sketch, bundle, cfg);
    slowest = std::max(slowest, seconds_since(t0));
    const ProjectionResult& p = c.projection;
    const double best_init = p.init.losses[p.init.index];
    improved += p.trace.rows.back().contextual <= best_init;
    ++runs;
    for (const LatentVector& z : p.trace.latents) {
      for (float v : z.values) in_range &= v >= -1.0f && v <= 1.0f;
    }
  }
  const double frac = static_cast<double>(improved) / runs;
  return {budget && frac >= 0.9 && in_range && slowest < 30.0,
          trained + fmt("; final <= best-of-N initial in %d/%d runs; z within [-1,1]: %s; slowest 500-iteration "
                        "run %.2fs", improved, runs, in_range ? "all" : "NO", slowest)};
}

Outcome initialization(const ModelBundle& bundle, const Corpus& held) {
  const ProjectionConfig defaults;
  bool exact = true;
  for (std::size_t i = 0; i < 10; ++i) {
    const Image sketch = held.base_pair(i).sketch;
    const JointImage y = corrupted_joint(sketch, Direction::sketch_to_image, bundle.arch.height);
    const Mask mask = make_mask(Direction::sketch_to_image, bundle.arch.height, bundle.arch.half_width());
    Rng a = make_rng(500 + i), b = make_rng(500 + i);
    const InitResult init = initialize(y.pixels, mask, bundle.generator, defaults.init_candidates, a);
    // brute force over the same candidates
    std::size_t best = 0;
    std::vector<double> losses;
    std::vector<LatentVector> zs;
    for (std::size_t n = 0; n < defaults.init_candidates; ++n) {
      zs.push_back(sample_latent(b, bundle.arch.latent_dim));
      losses.push_back(contextual_value(y.pixels, from_tensor(generate(bundle.generator, zs.back())), mask));
      if (losses[n] < losses[best]) best = n;
    }
    exact &= init.index == best && init.losses == losses && init.z.values == zs[best].values;
  }
  return {exact && defaults.init_candidates == 10,
          fmt("N=%zu; selected candidate equals the brute-force argmin on 10/10 sketches: %s",
              defaults.init_candidates, exact ? "yes" : "no")};
}

Outcome learning_signal(const ModelBundle& trained, const Toy& toy, const Corpus& held) {
  std::vector<std::size_t> idx(held.base_count());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Separation sep = measure_separation(trained, held, idx, 4242);

  const ModelBundle untrained = ModelBundle::initialize(toy.arch, toy.train.seed);
  EvalConfig cfg;
  cfg.projection.seed = 7;
  const EvalReport a = evaluate(trained, held, cfg);
  const EvalReport b = evaluate(untrained, held, cfg);
  return {sep.gap() >= 0.1 && a.ssim.mean > b.ssim.mean && a.rows.size() >= 50,
          fmt("sigmoid gap %.3f (real %.3f, generated %.3f); mean SSIM trained %.4f vs untrained %.4f over %zu sketches",
              sep.gap(), sep.real_mean, sep.fake_mean, a.ssim.mean, b.ssim.mean, a.rows.size())};
}

Outcome bidirectionality(const ModelBundle& bundle, const Corpus& held) {
  const std::size_t r = bundle.arch.height, half = bundle.arch.half_width();
  const Mask fwd = make_mask(Direction::sketch_to_image, r, half);
  const Mask rev = make_mask(Direction::image_to_sketch, r, half);
  bool swapped = true;
  for (std::size_t i = 0; i < fwd.values.pixels.size(); ++i) {
    swapped &= fwd.values.pixels[i] + rev.values.pixels[i] == 1.0f;
  }
  std::size_t near = 0, total = 0;
  bool same_engine = true;
  for (std::size_t i = 0; i < 20; ++i) {
    ProjectionConfig cfg;
    cfg.direction = Direction::image_to_sketch;
    cfg.seed = 2000 + i;
    const Image photo = held.base_pair(i).photo;
    const Completion c = complete(photo, bundle, cfg);
    if (i < 2) {
      // the same projection engine driven by hand with the swapped mask
      const JointImage y = corrupted_joint(photo, Direction::image_to_sketch, r);
      const ProjectionResult p = project(y.pixels, rev, bundle, cfg);
      same_engine &= p.z.values == c.projection.z.values &&
                     bitwise_equal(c.output, composite(y.pixels, rev, from_tensor(generate(bundle.generator, p.z))));
    }
    const auto halves = split_joint(JointImage{c.output});
    for (float v : halves.first.pixels) {
      near += std::abs(std::abs(v) - 1.0f) <= 0.2f;
      ++total;
    }
  }
  const double frac = static_cast<double>(near) / static_cast<double>(total);
  return {swapped && same_engine && frac >= 0.9,
          fmt("masks complementary: %s; engine identical: %s; generated sketch pixels within 0.2 of +-1: %.1f%%",
              swapped ? "yes" : "no", same_engine ? "yes" : "no", 100.0 * frac)};
}

Outcome reproducibility(const ModelBundle& bundle, const Toy& toy, const Corpus& held,
                        const fs::path& scratch) {
  CorpusSpec spec = toy.train_spec;
  spec.count = 40;
  const auto c1 = generate_procedural(spec), c2 = generate_procedural(spec);
  bool corpus_same = c1.size() == c2.size();
  for (std::size_t i = 0; corpus_same && i < c1.size(); ++i) {
    corpus_same &= bitwise_equal(c1[i].photo, c2[i].photo) && bitwise_equal(c1[i].sketch, c2[i].sketch);
  }
  const Corpus corpus(toy.train_spec);
  TrainConfig cfg = toy.train;
  cfg.max_steps = 10;
  const auto l1 = train(cfg, corpus, toy.arch).losses, l2 = train(cfg, corpus, toy.arch).losses;
  const bool losses_same = l1.size() == 10 && l1 == l2;

  ProjectionConfig pc;
  pc.seed = 31;
  pc.iterations = 100;
  const Image sketch = held.base_pair(0).sketch;
  const bool completion_same = bitwise_equal(complete(sketch, bundle, pc).output, complete(sketch, bundle, pc).output);

  fs::create_directories(scratch);
  save_bundle(bundle, scratch / "roundtrip.cgan");
  const ModelBundle loaded = load_bundle(scratch / "roundtrip.cgan");
  save_bundle(loaded, scratch / "roundtrip2.cgan");
  const auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const bool roundtrip = loaded == bundle && bytes(scratch / "roundtrip.cgan") == bytes(scratch / "roundtrip2.cgan");
  return {corpus_same && losses_same && completion_same && roundtrip,
          fmt("corpus %s, first 10 losses %s, completion %s, bundle round trip %s",
              corpus_same ? "identical" : "DIFFER", losses_same ? "identical" : "DIFFER",
              completion_same ? "identical" : "DIFFERS", roundtrip ? "bitwise" : "BROKEN")};
}

Outcome ssim_unit() {
  Rng rng = make_rng(88);
  const Image x = from_pixels(32, 32, 3, rng), y = from_pixels(32, 32, 3, rng);
  const bool self = ssim(x, x) == 1.0;
  const double asym = std::abs(ssim(x, y) - ssim(y, x));
  // 8x8 constants, luminance 0.5 against 0.6: only the mean term survives
  const Image a(8, 8, 3, 0.0f), b(8, 8, 3, 0.2f);
  const double mb = (static_cast<double>(0.2f) + 1.0) / 2.0;
  const double oracle = (2 * 0.5 * mb + 1e-4) / (0.25 + mb * mb + 1e-4);
  const double err = std::abs(ssim(a, b) - oracle);
  return {self && asym <= 1e-12 && err <= 1e-10,
          fmt("ssim(x,x) %s 1; |ssim(a,b)-ssim(b,a)| = %.1e; single-window oracle err %.1e",
              self ? "==" : "!=", asym, err)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::optional<fs::path> bundle_path;
  fs::path work = fs::temp_directory_path() / "ctxgan_acceptance";
  std::int64_t steps = Toy{}.train.max_steps;
  app.add_option("--bundle", bundle_path, "Use this toy bundle instead of training one");
  app.add_option("--work", work, "Scratch directory (the trained bundle is saved here)");
  app.add_option("--steps", steps, "Training steps for the toy bundle");
  bool train_only = false;
  bool strict = false;
  app.add_flag("--train-only", train_only, "Train and save the toy bundle, then exit");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  Toy toy;
  toy.train.max_steps = steps;
  fs::create_directories(work);
  const Corpus held(toy.held_spec);

  ModelBundle bundle;
  std::string train_note;
  std::optional<double> train_secs;
  if (bundle_path && fs::exists(*bundle_path) && !train_only) {
    bundle = load_bundle(*bundle_path);
    train_note = "loaded " + bundle_path->string();
    std::ifstream timing(bundle_path->string() + ".seconds");
    if (double secs = 0.0; timing >> secs) train_secs = secs;
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    const Corpus corpus(toy.train_spec);
    bundle = train(toy.train, corpus, toy.arch).bundle;
    const double secs = seconds_since(t0);
    const fs::path out = bundle_path ? *bundle_path : work / "toy.cgan";
    save_bundle(bundle, out);
    std::ofstream(out.string() + ".seconds") << secs << '\n';
    train_secs = secs;
    train_note = fmt("trained %lld steps in %.0fs, saved %s", static_cast<long long>(bundle.metadata.steps),
                     secs, out.string().c_str());
  }
  train_note += fmt(" (%s, C=%zu, %lld steps)", bundle.arch.resolution().c_str(), bundle.arch.max_channels,
                    static_cast<long long>(bundle.metadata.steps));
  if (train_only) {
    std::printf("toy bundle: %s\n", train_note.c_str());
    return 0;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", [] { return gradient_suite(); }},
      {"objective identities", [&] { return objective_identities(bundle, held); }},
      {"projection behavior", [&] { return projection_behavior(bundle, held, train_secs); }},
      {"initialization", [&] { return initialization(bundle, held); }},
      {"learning signal", [&] { return learning_signal(bundle, toy, held); }},
      {"bidirectionality", [&] { return bidirectionality(bundle, held); }},
      {"reproducibility", [&] { return reproducibility(bundle, toy, held, work); }},
      {"ssim unit", [] { return ssim_unit(); }},
  };
  // The report goes to stdout and to <work>/acceptance.txt.
  std::ofstream report(work / "acceptance.txt");
  const auto emit = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n' << std::flush;
  };
  emit("toy bundle: " + train_note);
  int failed = 0, crashed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("ERROR exception: ") + e.what()};
      ++crashed;
    }
    failed += !o.pass;
    emit(std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail);
  }
  emit(fmt("%d/%zu criteria passed", static_cast<int>(criteria.size()) - failed, criteria.size()));
  if (crashed > 0) return 2;
  return strict && failed > 0 ? 1 : 0;
}
