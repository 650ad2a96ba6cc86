#include "ctxgan/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "ctxgan/dataset.hpp"
#include "ctxgan/errors.hpp"

namespace ctxgan {

namespace {

std::vector<double> luminance_plane(const Image& img) {
  const Image gray = to_gray(img);
  std::vector<double> out(gray.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (static_cast<double>(gray.pixels[i]) + 1.0) * 0.5;
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError("ssim: images differ in shape");
  }
  if (a.empty()) throw DimensionError("ssim: empty images");
  const std::size_t ws = std::min({options.window, a.height, a.width});
  std::vector<double> w(ws * ws);
  const double c = (static_cast<double>(ws) - 1.0) / 2.0;
  double norm = 0.0;
  for (std::size_t y = 0; y < ws; ++y)
    for (std::size_t x = 0; x < ws; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      w[y * ws + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * options.sigma * options.sigma));
      norm += w[y * ws + x];
    }
  for (double& v : w) v /= norm;

  const std::vector<double> la = luminance_plane(a), lb = luminance_plane(b);
  const double c1 = options.k1 * options.k1, c2 = options.k2 * options.k2;
  const std::size_t oh = a.height - ws + 1, ow = a.width - ws + 1;
  double acc = 0.0;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = 0; y < ws; ++y)
        for (std::size_t x = 0; x < ws; ++x) {
          const double wt = w[y * ws + x];
          const double va = la[(oy + y) * a.width + ox + x];
          const double vb = lb[(oy + y) * a.width + ox + x];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  return acc / static_cast<double>(oh * ow);
}

double reextraction_score(const Image& generated_photo, const Image& input_sketch,
                          const SketchStyle& style) {
  const Image extracted = xdog(generated_photo, style);
  const Image sketch = to_gray(input_sketch);
  if (sketch.height != extracted.height || sketch.width != extracted.width) {
    throw DimensionError("reextraction_score: photo and sketch sizes differ");
  }
  Mask all{Image(sketch.height, sketch.width, 1, 1.0f), Direction::sketch_to_image};
  return contextual_value(to_rgb(sketch), to_rgb(extracted), all);
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"projection", c.projection}, {"count", c.count}, {"jobs", c.jobs},
                     {"montages", c.montages},
                     {"style", c.style.name}};
}

Aggregate aggregate(std::vector<double> values) {
  Aggregate out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  out.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const EvalRow& r : rows) {
    rows_json.push_back({{"index", r.index},
                         {"ssim", r.ssim},
                         {"reextraction", r.reextraction},
                         {"final_contextual", r.final_contextual}});
  }
  return {{"config", config},
          {"count", rows.size()},
          {"ssim", {{"mean", ssim.mean}, {"median", ssim.median}}},
          {"reextraction", {{"mean", reextraction.mean}, {"median", reextraction.median}}},
          {"rows", rows_json}};
}

EvalReport evaluate(const ModelBundle& bundle, const Corpus& test, const EvalConfig& config) {
  const std::size_t available = test.base_count();
  const std::size_t n = config.count == 0 ? available : std::min(config.count, available);
  std::vector<SketchPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back(test.base_pair(i));
  return evaluate(bundle, pairs, config);
}

EvalReport evaluate(const ModelBundle& bundle, const std::vector<SketchPair>& test,
                    const EvalConfig& config) {
  const std::size_t n = config.count == 0 ? test.size() : std::min(config.count, test.size());
  if (n == 0) throw ArgumentError("evaluate: empty test set");
  config.projection.validate();

  EvalReport report;
  report.rows.resize(n);
  if (config.montages) report.montages.resize(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const SketchPair& pair = test[i];
        ProjectionConfig pc = config.projection;
        pc.direction = Direction::sketch_to_image;
        pc.seed = make_rng(config.projection.seed, {0x6576616c, i})();
        const Completion c = complete(pair.sketch, bundle, pc);
        const auto [sketch_half, photo_half] = split_joint(JointImage{c.output});
        report.rows[i] = EvalRow{i, ssim(photo_half, pair.photo),
                                 reextraction_score(photo_half, pair.sketch, config.style),
                                 c.projection.trace.rows.back().contextual};
        if (config.montages) {
          const Image panels[] = {to_rgb(pair.sketch), photo_half, to_rgb(pair.photo)};
          report.montages[i] = hconcat(panels);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<double> s, r;
  for (const EvalRow& row : report.rows) {
    s.push_back(row.ssim);
    r.push_back(row.reextraction);
  }
  report.ssim = aggregate(s);
  report.reextraction = aggregate(r);
  report.config = config;
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json") << report.to_json().dump(2) << '\n';
  std::ofstream csv(dir / "rows.csv");
  csv << "index,ssim,reextraction,final_contextual\n";
  char line[128];
  for (const EvalRow& r : report.rows) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", r.index, r.ssim, r.reextraction,
                  r.final_contextual);
    csv << line;
  }
  for (std::size_t i = 0; i < report.montages.size(); ++i) {
    std::snprintf(line, sizeof line, "montage_%05zu.png", report.rows[i].index);
    write_png(dir / line, report.montages[i]);
  }
}

}  // namespace ctxgan
