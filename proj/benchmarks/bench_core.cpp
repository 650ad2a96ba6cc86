#include <benchmark/benchmark.h>

#include "ctxgan/eval.hpp"
#include "ctxgan/ops.hpp"
#include "ctxgan/projection.hpp"
#include "ctxgan/sketch.hpp"
#include "ctxgan/training.hpp"

using namespace ctxgan;

namespace {

Tensor<float> noise(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng = make_rng(seed);
  std::vector<float> v(shape_size(shape));
  for (float& x : v) x = static_cast<float>(uniform(rng, -1, 1));
  return Tensor<float>(std::move(shape), std::move(v), grad);
}

Image noise_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Image img(h, w, c);
  Rng rng = make_rng(seed);
  for (float& v : img.pixels) v = static_cast<float>(uniform(rng, -1, 1));
  return img;
}

Architecture toy(std::size_t channels) {
  Architecture a = Architecture::desk_scale();
  a.max_channels = channels;
  return a;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor<float> x = noise({16, 16, 32, c}, 1);
  const Tensor<float> k = noise({5, 5, c, 2 * c}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 2, Padding::same));
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor<float> x = noise({16, 16, 32, c}, 1);
  for (auto _ : state) {
    Tensor<float> k = noise({5, 5, c, 2 * c}, 2, true);
    Tensor<float> y = sum(conv2d(x, k, 2, Padding::same));
    backward(y);
    benchmark::DoNotOptimize(k.grad());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(64);

void BM_GeneratorForward(benchmark::State& state) {
  const ModelBundle b = ModelBundle::initialize(toy(static_cast<std::size_t>(state.range(0))), 1);
  Rng rng = make_rng(2);
  const Tensor<float> z = sample_latent_batch(rng, 1, 100);
  for (auto _ : state) benchmark::DoNotOptimize(b.generator.forward(z));
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
  ModelBundle b = ModelBundle::initialize(toy(64), 1);
  auto g_opt = make_adam_state<float>(b.generator.parameters(), AdamOptions{2e-4, 0.5, 0.999, 1e-8});
  auto d_opt = make_adam_state<float>(b.discriminator.parameters(), AdamOptions{2e-4, 0.5, 0.999, 1e-8});
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor<float> real = noise({n, 32, 64, 3}, 3);
  Rng rng = make_rng(4);
  const Tensor<float> z = sample_latent_batch(rng, n, 100);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(b, g_opt, d_opt, real, z));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Projection(benchmark::State& state) {
  const ModelBundle b = ModelBundle::initialize(toy(64), 1);
  const Image sketch = xdog(noise_image(32, 32, 3, 5), style_preset("xdog-fine"));
  ProjectionConfig cfg;
  cfg.iterations = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(complete(sketch, b, cfg));
}
BENCHMARK(BM_Projection)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_Xdog(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Image photo = noise_image(side, side, 3, 6);
  const SketchStyle style = style_preset("xdog-coarse");
  for (auto _ : state) benchmark::DoNotOptimize(xdog(photo, style));
}
BENCHMARK(BM_Xdog)->Arg(32)->Arg(256);

void BM_Ssim(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Image a = noise_image(side, side, 3, 7), b = noise_image(side, side, 3, 8);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128);

void BM_ContextualValue(benchmark::State& state) {
  const Image y = noise_image(32, 64, 3, 9), g = noise_image(32, 64, 3, 10);
  const Mask m = make_mask(Direction::sketch_to_image, 32, 32);
  for (auto _ : state) benchmark::DoNotOptimize(contextual_value(y, g, m));
}
BENCHMARK(BM_ContextualValue);

}  // namespace

BENCHMARK_MAIN();
