#include "ctxgan/training.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <fstream>
#include <thread>

#include "ctxgan/bundle_io.hpp"
#include "ctxgan/errors.hpp"

namespace ctxgan {

void TrainConfig::validate() const {
  if (epochs < 0) throw ArgumentError("train: epochs must be non-negative");
  if (batch_size == 0) throw ArgumentError("train: batch_size must be positive");
  if (!(g_lr > 0.0) || !(d_lr > 0.0) || !(finetune_lr > 0.0)) {
    throw ArgumentError("train: learning rates must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("train: betas must lie in [0,1)");
  }
  if (max_steps < 0 || checkpoint_every < 0) {
    throw ArgumentError("train: step counts must be non-negative");
  }
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw ArgumentError("train: checkpoint_every needs a checkpoint_dir");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"g_lr", c.g_lr},
                     {"d_lr", c.d_lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"seed", c.seed},
                     {"max_steps", c.max_steps},
                     {"checkpoint_every", c.checkpoint_every},
                     {"checkpoint_dir", c.checkpoint_dir.string()},
                     {"finetune_lr", c.finetune_lr},
                     {"prefetch", c.prefetch}};
  if (c.finetune_from) j["finetune_from"] = c.finetune_from->string();
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.g_lr = j.value("g_lr", d.g_lr);
  c.d_lr = j.value("d_lr", d.d_lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.seed = j.value("seed", d.seed);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.checkpoint_dir = j.value("checkpoint_dir", std::string{});
  c.finetune_lr = j.value("finetune_lr", d.finetune_lr);
  c.prefetch = j.value("prefetch", d.prefetch);
  if (j.contains("finetune_from")) c.finetune_from = j.at("finetune_from").get<std::string>();
}

// -- loss log --------------------------------------------------------------

LossLog::LossLog(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create loss log " + path_.string());
    out << "step,d_loss,g_loss\n";
    return;
  }
  const std::vector<LossRecord> existing = read(path_);
  if (!existing.empty()) last_step_ = existing.back().step;
}

void LossLog::append(const LossRecord& r) {
  if (r.step <= last_step_) {
    throw ArgumentError("loss log: step " + std::to_string(r.step) + " does not follow step " +
                        std::to_string(last_step_));
  }
  last_step_ = r.step;
  std::ofstream out(path_, std::ios::app);
  char line[96];
  std::snprintf(line, sizeof line, "%lld,%.17g,%.17g\n", static_cast<long long>(r.step), r.d_loss,
                r.g_loss);
  out << line;
}

std::vector<LossRecord> LossLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open loss log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,d_loss,g_loss") throw FormatError("loss log: unexpected header '" + line + "'");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf", &step, &r.d_loss, &r.g_loss) != 3) {
      throw FormatError("loss log: malformed row '" + line + "'");
    }
    r.step = step;
    out.push_back(r);
  }
  return out;
}

// -- checkpoints -----------------------------------------------------------

namespace {

nlohmann::json adam_json(const AdamState<float>& s) {
  return {{"step", s.step},
          {"learning_rate", s.options.learning_rate},
          {"beta1", s.options.beta1},
          {"beta2", s.options.beta2},
          {"epsilon", s.options.epsilon}};
}

void export_adam(const AdamState<float>& s, const std::string& prefix, std::vector<NamedArray>& out) {
  for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
    const std::string idx = std::to_string(i);
    out.push_back({prefix + ".m." + idx, Shape{s.first_moment[i].size()}, s.first_moment[i]});
    out.push_back({prefix + ".v." + idx, Shape{s.second_moment[i].size()}, s.second_moment[i]});
  }
}

AdamState<float> import_adam(const nlohmann::json& j, const std::vector<Tensor<float>>& params,
                             const std::string& prefix, const std::vector<NamedArray>& arrays) {
  AdamOptions opts;
  opts.learning_rate = j.at("learning_rate").get<double>();
  opts.beta1 = j.at("beta1").get<double>();
  opts.beta2 = j.at("beta2").get<double>();
  opts.epsilon = j.at("epsilon").get<double>();
  AdamState<float> s = make_adam_state<float>(params, opts);
  s.step = j.at("step").get<std::int64_t>();
  std::map<std::string, const NamedArray*> by_name;
  for (const NamedArray& a : arrays) by_name[a.name] = &a;
  const auto fetch = [&](const std::string& name, std::vector<float>& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing array '" + name + "'");
    if (it->second->data.size() != dst.size()) {
      throw FormatError("checkpoint: array '" + name + "' has the wrong length");
    }
    dst = it->second->data;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    fetch(prefix + ".m." + std::to_string(i), s.first_moment[i]);
    fetch(prefix + ".v." + std::to_string(i), s.second_moment[i]);
  }
  return s;
}

}  // namespace

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
  WeightArchive archive{state.bundle.descriptor(), state.bundle.export_arrays()};
  archive.descriptor["checkpoint"] = {
      {"step", state.step}, {"g_opt", adam_json(state.g_opt)}, {"d_opt", adam_json(state.d_opt)}};
  export_adam(state.g_opt, "opt.g", archive.arrays);
  export_adam(state.d_opt, "opt.d", archive.arrays);
  write_archive(path, archive);
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  const WeightArchive archive = read_archive(path);
  if (!archive.descriptor.contains("checkpoint")) {
    throw FormatError("checkpoint: '" + path.string() + "' is a plain bundle without optimizer state");
  }
  TrainingState state;
  state.bundle = bundle_from_archive(archive);
  const auto& ck = archive.descriptor.at("checkpoint");
  try {
    state.step = ck.at("step").get<std::int64_t>();
    state.g_opt = import_adam(ck.at("g_opt"), state.bundle.generator.parameters(), "opt.g", archive.arrays);
    state.d_opt =
        import_adam(ck.at("d_opt"), state.bundle.discriminator.parameters(), "opt.d", archive.arrays);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed optimizer entry: ") + e.what());
  }
  return state;
}

// -- the loop --------------------------------------------------------------

std::int64_t planned_steps(const TrainConfig& config, const Corpus& corpus) {
  const auto per_epoch = static_cast<std::int64_t>(
      (corpus.size() + config.batch_size - 1) / config.batch_size);
  std::int64_t total = config.epochs * per_epoch;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);
  return total;
}

double discriminator_step(ModelBundle& bundle, AdamState<float>& d_opt, const Tensor<float>& real,
                          const Tensor<float>& z) {
  // Maximize log D(x) + log(1 - D(G(z))), i.e. minimize
  // softplus(-D(x)) + softplus(D(G(z))). G runs on batch statistics with
  // frozen weights and untouched running statistics.
  Discriminator<float>& d = bundle.discriminator;
  auto d_params = d.parameters();
  for (auto& p : d_params) p.zero_grad();
  const Tensor<float> fake = bundle.generator.forward(z, Pass{BatchNormMode::train, false});
  const Tensor<float> d_loss = add(mean(softplus(affine(d.forward_train(real), -1.0f))),
                                   mean(softplus(d.forward_train(fake))));
  backward(d_loss);
  adam_step<float>(d_params, d_opt);
  return d_loss.item();
}

double generator_step(ModelBundle& bundle, AdamState<float>& g_opt, const Tensor<float>& z) {
  // Non-saturating form: minimize softplus(-D(G(z))).
  Generator<float>& g = bundle.generator;
  auto g_params = g.parameters();
  for (auto& p : g_params) p.zero_grad();
  const Tensor<float> logits =
      bundle.discriminator.forward(g.forward_train(z), Pass{BatchNormMode::train, false});
  const Tensor<float> g_loss = mean(softplus(affine(logits, -1.0f)));
  backward(g_loss);
  adam_step<float>(g_params, g_opt);
  return g_loss.item();
}

std::pair<double, double> train_step(ModelBundle& bundle, AdamState<float>& g_opt,
                                     AdamState<float>& d_opt, const Tensor<float>& real,
                                     const Tensor<float>& z) {
  const double d_loss = discriminator_step(bundle, d_opt, real, z);
  const double g_loss = generator_step(bundle, g_opt, z);
  return {d_loss, g_loss};
}

namespace {

void check_resolution(const Architecture& arch, const Corpus& corpus) {
  const std::size_t r = corpus.spec().resolution;
  if (arch.height != r || arch.width != 2 * r) {
    throw FormatError("descriptor mismatch: model joint resolution " + arch.resolution() +
                      " but corpus joints are " + std::to_string(r) + "x" + std::to_string(2 * r));
  }
}

std::string corpus_style(const Corpus& corpus) {
  std::string out;
  for (const SketchStyle& s : corpus.spec().styles) out += (out.empty() ? "" : "+") + s.name;
  return out;
}

struct StepBatch {
  std::int64_t step;
  Tensor<float> real;
};

TrainResult run_loop(const TrainConfig& config, const Corpus& corpus, TrainingState state,
                     const TrainHooks& hooks) {
  const std::int64_t total = planned_steps(config, corpus);
  const std::size_t n = corpus.size();
  const auto per_epoch = static_cast<std::int64_t>((n + config.batch_size - 1) / config.batch_size);
  const std::size_t latent = state.bundle.arch.latent_dim;

  std::optional<LossLog> log;
  if (hooks.loss_csv) log.emplace(*hooks.loss_csv);
  if (config.checkpoint_every > 0) std::filesystem::create_directories(config.checkpoint_dir);

  BoundedQueue<StepBatch> queue(config.prefetch);
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      std::int64_t cached_epoch = -1;
      std::vector<std::size_t> order;
      for (std::int64_t s = state.step; s < total; ++s) {
        const std::int64_t epoch = s / per_epoch;
        if (epoch != cached_epoch) {
          order = epoch_order(n, config.seed, static_cast<std::uint64_t>(epoch));
          cached_epoch = epoch;
        }
        const std::size_t begin = static_cast<std::size_t>(s % per_epoch) * config.batch_size;
        const std::size_t end = std::min(begin + config.batch_size, n);
        const std::span<const std::size_t> idx(order.data() + begin, end - begin);
        if (!queue.push(StepBatch{s, make_batch(corpus, idx).joints})) return;
      }
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });

  TrainResult result;
  try {
    while (auto item = queue.pop()) {
      const std::int64_t s = item->step;
      Rng rng = make_rng(config.seed, {0x7a, static_cast<std::uint64_t>(s)});
      const Tensor<float> z = sample_latent_batch(rng, item->real.dim(0), latent);
      const auto [d_loss, g_loss] = train_step(state.bundle, state.g_opt, state.d_opt, item->real, z);
      if (!std::isfinite(d_loss) || !std::isfinite(g_loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(s + 1) +
                            " (d_loss=" + std::to_string(d_loss) +
                            ", g_loss=" + std::to_string(g_loss) + ")");
      }
      state.step = s + 1;
      ++state.bundle.metadata.steps;
      const LossRecord record{state.step, d_loss, g_loss};
      result.losses.push_back(record);
      // Steps replayed after a resume are already in the log, bit for bit.
      if (log && record.step > log->last_step()) log->append(record);
      if (hooks.on_step) hooks.on_step(record);
      if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
        char name[40];
        std::snprintf(name, sizeof name, "step_%08lld.ckpt", static_cast<long long>(state.step));
        save_checkpoint(state, config.checkpoint_dir / name);
      }
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);

  state.bundle.metadata.epochs = per_epoch > 0 ? state.step / per_epoch : 0;
  result.bundle = std::move(state.bundle);
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Corpus& corpus, const Architecture& arch,
                  const TrainHooks& hooks) {
  config.validate();
  check_resolution(arch, corpus);
  TrainingState state;
  state.bundle = ModelBundle::initialize(arch, config.seed, corpus_style(corpus));
  state.bundle.metadata.style_history = {state.bundle.style};
  state.g_opt = make_adam_state<float>(state.bundle.generator.parameters(),
                                       AdamOptions{config.g_lr, config.beta1, config.beta2, 1e-8});
  state.d_opt = make_adam_state<float>(state.bundle.discriminator.parameters(),
                                       AdamOptions{config.d_lr, config.beta1, config.beta2, 1e-8});
  return run_loop(config, corpus, std::move(state), hooks);
}

TrainResult resume(const TrainConfig& config, const Corpus& corpus, TrainingState state,
                   const TrainHooks& hooks) {
  config.validate();
  check_resolution(state.bundle.arch, corpus);
  return run_loop(config, corpus, std::move(state), hooks);
}

TrainResult finetune(const ModelBundle& base, const TrainConfig& config, const Corpus& corpus,
                     const TrainHooks& hooks) {
  config.validate();
  check_resolution(base.arch, corpus);
  TrainingState state;
  state.bundle = base;
  state.bundle.style = corpus_style(corpus);
  state.bundle.metadata.style_history.push_back(state.bundle.style);
  const AdamOptions opts{config.finetune_lr, config.beta1, config.beta2, 1e-8};
  state.g_opt = make_adam_state<float>(state.bundle.generator.parameters(), opts);
  state.d_opt = make_adam_state<float>(state.bundle.discriminator.parameters(), opts);
  return run_loop(config, corpus, std::move(state), hooks);
}

Separation measure_separation(const ModelBundle& bundle, const Corpus& corpus,
                              std::span<const std::size_t> indices, std::uint64_t seed) {
  if (indices.empty()) throw ArgumentError("separation: no samples");
  constexpr std::size_t chunk = 64;
  Separation out;
  Rng rng = make_rng(seed, {0x73, 0x65, 0x70});
  for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, indices.size() - begin);
    const Batch batch = make_batch(corpus, indices.subspan(begin, count));
    const Tensor<float> real = sigmoid(bundle.discriminator.forward(batch.joints));
    const Tensor<float> fake = sigmoid(bundle.discriminator.forward(
        bundle.generator.forward(sample_latent_batch(rng, count, bundle.arch.latent_dim))));
    for (std::size_t i = 0; i < count; ++i) {
      out.real_mean += real.at(i);
      out.fake_mean += fake.at(i);
    }
  }
  out.real_mean /= static_cast<double>(indices.size());
  out.fake_mean /= static_cast<double>(indices.size());
  return out;
}

}  // namespace ctxgan
