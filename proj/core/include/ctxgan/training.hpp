#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxgan/dataset.hpp"
#include "ctxgan/model.hpp"
#include "ctxgan/optim.hpp"

namespace ctxgan {

struct TrainConfig {
  std::int64_t epochs = 200;
  std::size_t batch_size = 64;
  double g_lr = 2e-4;
  double d_lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps in total (0 = run all epochs).
  std::int64_t max_steps = 0;
  /// Write a resumable checkpoint every this many steps (0 = never).
  std::int64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  std::optional<std::filesystem::path> finetune_from;
  double finetune_lr = 1e-5;
  /// Batches rendered ahead by the producer thread.
  std::size_t prefetch = 4;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
  std::int64_t step = 0;  ///< 1-based count of completed updates
  double d_loss = 0.0;
  double g_loss = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// Append-only CSV with header "step,d_loss,g_loss". Values are written with
/// enough digits to round-trip a double. Opening an existing log continues
/// it; steps must strictly increase.
class LossLog {
 public:
  explicit LossLog(std::filesystem::path path);
  void append(const LossRecord& r);
  std::int64_t last_step() const { return last_step_; }
  static std::vector<LossRecord> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::int64_t last_step_ = 0;
};

/// Everything needed to continue training bit-for-bit.
struct TrainingState {
  ModelBundle bundle;
  AdamState<float> g_opt;
  AdamState<float> d_opt;
  std::int64_t step = 0;  ///< updates already applied in this run
};

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path);

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::optional<std::filesystem::path> loss_csv;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<LossRecord> losses;
};

/// Number of updates a run of `config` over `corpus` performs.
std::int64_t planned_steps(const TrainConfig& config, const Corpus& corpus);

/// Fresh networks initialized from config.seed, trained on `corpus`.
TrainResult train(const TrainConfig& config, const Corpus& corpus, const Architecture& arch,
                  const TrainHooks& hooks = {});
/// Continues a checkpointed run up to the same plan. Steps are numbered as
/// in the original run.
TrainResult resume(const TrainConfig& config, const Corpus& corpus, TrainingState state,
                   const TrainHooks& hooks = {});
/// Same loop from `base` with fresh optimizers at config.finetune_lr; the
/// style tag becomes the corpus style. Throws FormatError on a descriptor
/// mismatch between base and corpus.
TrainResult finetune(const ModelBundle& base, const TrainConfig& config, const Corpus& corpus,
                     const TrainHooks& hooks = {});

/// Single-network updates; the other network's weights and running
/// statistics are left untouched. Each returns its loss before the update.
double discriminator_step(ModelBundle& bundle, AdamState<float>& d_opt, const Tensor<float>& real,
                          const Tensor<float>& z);
double generator_step(ModelBundle& bundle, AdamState<float>& g_opt, const Tensor<float>& z);

/// One discriminator update and one generator update on a batch of real
/// joint images with latent batch z. Returns (d_loss, g_loss).
std::pair<double, double> train_step(ModelBundle& bundle, AdamState<float>& g_opt,
                                     AdamState<float>& d_opt, const Tensor<float>& real,
                                     const Tensor<float>& z);

struct Separation {
  double real_mean = 0.0;  ///< mean sigmoid(D(x)) over real samples
  double fake_mean = 0.0;  ///< mean sigmoid(D(G(z))) over generated samples
  double gap() const { return real_mean - fake_mean; }
};

/// Inference-mode discriminator scores on the given corpus indices and on as
/// many generated samples drawn from `seed`.
Separation measure_separation(const ModelBundle& bundle, const Corpus& corpus,
                              std::span<const std::size_t> indices, std::uint64_t seed);

}  // namespace ctxgan
