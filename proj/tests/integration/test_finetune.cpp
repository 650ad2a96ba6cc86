// Finetuning a trained toy bundle on a second sketch style. Needs the bundle
// written by the acceptance fixture, passed in CTXGAN_TOY_BUNDLE.

#include <algorithm>
#include <cstdlib>
#include <filesystem>

#include "ctxgan/bundle_io.hpp"
#include "ctxgan/projection.hpp"
#include "ctxgan/training.hpp"
#include "doctest.h"

using namespace ctxgan;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> final_losses(const ModelBundle& bundle, const Corpus& sketches) {
  std::vector<double> out;
  for (std::size_t i = 0; i < sketches.base_count(); ++i) {
    ProjectionConfig cfg;
    cfg.seed = 3000 + i;
    out.push_back(complete(sketches.base_pair(i).sketch, bundle, cfg).projection.trace.rows.back().contextual);
  }
  return out;
}

}  // namespace

TEST_CASE("finetuning on a new style lowers the median final contextual loss on that style") {
  const char* path = std::getenv("CTXGAN_TOY_BUNDLE");
  REQUIRE_MESSAGE(path != nullptr, "CTXGAN_TOY_BUNDLE is not set");
  REQUIRE(std::filesystem::exists(path));
  const ModelBundle base = load_bundle(path);
  REQUIRE(base.metadata.style_history.back() == "xdog-fine");

  CorpusSpec spec;
  spec.resolution = base.arch.height;
  spec.count = 1000;
  spec.seed = 11;
  spec.styles = {style_preset("xdog-coarse")};
  CorpusSpec held = spec;
  held.count = 10;
  held.seed = 999;
  held.crops = 1;
  held.flip = false;
  held.crop_fraction = 1.0;

  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.seed = 2;
  cfg.max_steps = 300;
  const ModelBundle tuned = finetune(base, cfg, Corpus(spec)).bundle;
  CHECK(tuned.metadata.style_history.back() == "xdog-coarse");

  const Corpus test(held);
  const double before = median(final_losses(base, test));
  const double after = median(final_losses(tuned, test));
  MESSAGE("median final contextual loss: base " << before << ", finetuned " << after);
  CHECK(after < before);
}
