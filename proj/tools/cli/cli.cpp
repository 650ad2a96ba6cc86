#include "cli/cli.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <pthread.h>
#include <spdlog/spdlog.h>

#include "ctxgan/bundle_io.hpp"
#include "ctxgan/errors.hpp"
#include "ctxgan/eval.hpp"
#include "ctxgan/projection.hpp"
#include "ctxgan/training.hpp"
#include "service/service.hpp"

namespace ctxgan::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags that override keys of a subcommand's resolved JSON config. Only
// flags given on the command line take effect, so precedence is
// flags > config file > defaults.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer,
                   const std::string& help) {
    auto value = std::make_shared<std::optional<T>>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    appliers_.push_back([value, pointer](json& j) {
      if (*value) j[json::json_pointer(pointer)] = **value;
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& pointer,
                        bool when_set, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(flag, *value, help);
    appliers_.push_back([value, pointer, when_set](json& j) {
      if (*value) j[json::json_pointer(pointer)] = when_set;
    });
    return opt;
  }

  void apply(json& j) const {
    for (const auto& f : appliers_) f(j);
  }

 private:
  std::vector<std::function<void(json&)>> appliers_;
};

// Every key in `file` must exist in `defaults` (recursively for objects),
// apart from the listed optional top-level keys.
void check_keys(const json& file, const json& defaults, const std::string& where,
                const std::vector<std::string>& optional = {}) {
  if (!file.is_object()) throw UsageError("config " + where + " must be a JSON object");
  for (const auto& [key, value] : file.items()) {
    const bool known = defaults.contains(key) ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw UsageError("unknown config key '" + where + key + "'");
    if (value.is_object() && defaults.contains(key) && defaults.at(key).is_object()) {
      check_keys(value, defaults.at(key), where + key + ".");
    }
  }
}

json resolve(json defaults, const std::optional<fs::path>& config_file, const Overrides& flags,
             const std::vector<std::string>& optional_keys = {}) {
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw UsageError("cannot read config file " + config_file->string());
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file " + config_file->string() + ": " + e.what());
    }
    check_keys(file, defaults, "", optional_keys);
    defaults.merge_patch(file);
  }
  flags.apply(defaults);
  return defaults;
}

void write_sidecar(const fs::path& artifact, const std::string& command, const json& resolved) {
  const fs::path path = fs::is_directory(artifact) ? artifact / "run.json"
                                                   : fs::path(artifact.string() + ".run.json");
  const json sidecar{{"command", command}, {"config", resolved}, {"version", "0.1.0"}};
  std::ofstream(path) << sidecar.dump(2) << '\n';
  spdlog::info("wrote {}", path.string());
}

void echo(const std::string& command, const json& resolved) {
  spdlog::info("{} config: {}", command, resolved.dump());
}

fs::path manifest_path(const fs::path& p) {
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

// -- corpus ------------------------------------------------------------------

struct CorpusArgs {
  fs::path out;
  std::optional<fs::path> config;
  std::vector<std::string> styles;
  Overrides flags;
};

void setup_corpus(CLI::App& app, CorpusArgs& a) {
  auto* sub = app.add_subcommand("corpus", "Build a paired photo/sketch corpus and its manifest");
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--config", a.config, "JSON config file");
  a.flags.add<std::string>(sub, "--source", "/source", "procedural or folder");
  a.flags.add<std::string>(sub, "--folder", "/folder", "Image folder for the folder source");
  a.flags.add<std::size_t>(sub, "--count", "/count", "Number of base pairs");
  a.flags.add<std::size_t>(sub, "--resolution", "/resolution", "Square side of each half");
  sub->add_option("--style", a.styles, "Sketch style preset (repeatable)");
  a.flags.add<std::size_t>(sub, "--crops", "/crops", "Random crops per pair");
  a.flags.add_flag(sub, "--no-flip", "/flip", false, "Disable mirrored copies");
  a.flags.add<double>(sub, "--crop-fraction", "/crop_fraction", "Crop side relative to the image");
  a.flags.add<std::uint64_t>(sub, "--seed", "/seed", "Corpus seed");
}

int run_corpus(const CorpusArgs& a) {
  json resolved = resolve(json(CorpusSpec{}), a.config, a.flags);
  if (!a.styles.empty()) resolved["styles"] = a.styles;
  const CorpusSpec spec = resolved.get<CorpusSpec>();
  resolved = spec;
  echo("corpus", resolved);
  const Corpus corpus(spec);
  const fs::path manifest = write_corpus(corpus, a.out);
  spdlog::info("wrote {} pairs, manifest {}", corpus.base_count(), manifest.string());
  write_sidecar(a.out, "corpus", resolved);
  return 0;
}

// -- train / finetune ----------------------------------------------------------

struct TrainArgs {
  fs::path corpus;
  fs::path out;
  std::optional<fs::path> base;
  std::optional<fs::path> resume;
  std::optional<fs::path> loss_csv;
  std::optional<fs::path> config;
  std::int64_t log_every = 50;
  Overrides flags;
};

void add_train_flags(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--corpus", a.corpus, "Corpus manifest or directory")->required();
  sub->add_option("--out", a.out, "Output bundle path")->required();
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_option("--loss-csv", a.loss_csv, "Loss log (default <out stem>.losses.csv)");
  sub->add_option("--log-every", a.log_every, "Log losses every N steps");
  a.flags.add<std::int64_t>(sub, "--epochs", "/epochs", "Passes over the corpus");
  a.flags.add<std::size_t>(sub, "--batch-size", "/batch_size", "Batch size");
  a.flags.add<std::uint64_t>(sub, "--seed", "/seed", "Training seed");
  a.flags.add<std::int64_t>(sub, "--max-steps", "/max_steps", "Stop after this many updates");
  a.flags.add<std::int64_t>(sub, "--checkpoint-every", "/checkpoint_every", "Checkpoint cadence in steps");
  a.flags.add<std::string>(sub, "--checkpoint-dir", "/checkpoint_dir", "Checkpoint directory");
  a.flags.add<double>(sub, "--beta1", "/beta1", "Adam beta1");
  a.flags.add<double>(sub, "--beta2", "/beta2", "Adam beta2");
  a.flags.add<std::size_t>(sub, "--prefetch", "/prefetch", "Batches prepared ahead");
}

void setup_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train a joint-image GAN on a corpus");
  add_train_flags(sub, a);
  a.flags.add<double>(sub, "--g-lr", "/g_lr", "Generator learning rate");
  a.flags.add<double>(sub, "--d-lr", "/d_lr", "Discriminator learning rate");
  a.flags.add<std::size_t>(sub, "--max-channels", "/architecture/max_channels", "Widest layer");
  a.flags.add<std::size_t>(sub, "--latent-dim", "/architecture/latent_dim", "Latent size");
  sub->add_option("--resume", a.resume, "Continue from a checkpoint");
}

void setup_finetune(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("finetune", "Continue training a bundle on a new sketch style");
  sub->add_option("--base", a.base, "Bundle to start from")->required();
  add_train_flags(sub, a);
  a.flags.add<double>(sub, "--lr", "/finetune_lr", "Learning rate for both networks");
}

TrainHooks train_hooks(const TrainArgs& a) {
  TrainHooks hooks;
  hooks.loss_csv = a.loss_csv ? *a.loss_csv : with_suffix(a.out, ".losses.csv");
  const std::int64_t every = std::max<std::int64_t>(1, a.log_every);
  hooks.on_step = [every](const LossRecord& r) {
    if (r.step % every == 0) spdlog::info("step {} d_loss {:.4f} g_loss {:.4f}", r.step, r.d_loss, r.g_loss);
  };
  return hooks;
}

int run_train(const TrainArgs& a, bool finetuning) {
  const Corpus corpus = load_corpus(manifest_path(a.corpus));
  json defaults = TrainConfig{};
  if (!finetuning) {
    Architecture arch;
    arch.height = corpus.spec().resolution;
    arch.width = 2 * arch.height;
    defaults["architecture"] = arch;
  }
  json resolved = resolve(defaults, a.config, a.flags, {"finetune_from"});
  TrainConfig config = resolved.get<TrainConfig>();
  if (finetuning) config.finetune_from = *a.base;
  config.validate();

  const TrainHooks hooks = train_hooks(a);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  TrainResult result;
  if (finetuning) {
    resolved = config;
    echo("finetune", resolved);
    result = finetune(load_bundle(*a.base), config, corpus, hooks);
  } else {
    const Architecture arch = resolved.at("architecture").get<Architecture>();
    arch.validate();
    resolved = config;
    resolved["architecture"] = arch;
    echo("train", resolved);
    if (a.resume) {
      TrainingState state = load_checkpoint(*a.resume);
      if (!(state.bundle.arch == arch)) {
        throw FormatError("descriptor mismatch: checkpoint architecture " +
                          json(state.bundle.arch).dump() + " vs requested " + json(arch).dump());
      }
      resolved["resume"] = a.resume->string();
      result = resume(config, corpus, std::move(state), hooks);
    } else {
      result = train(config, corpus, arch, hooks);
    }
  }
  resolved["corpus"] = manifest_path(a.corpus).string();
  resolved["loss_csv"] = hooks.loss_csv->string();
  save_bundle(result.bundle, a.out);
  spdlog::info("wrote {} after {} steps", a.out.string(), result.bundle.metadata.steps);
  write_sidecar(a.out, finetuning ? "finetune" : "train", resolved);
  return 0;
}

// -- complete / reverse -----------------------------------------------------------

struct CompleteArgs {
  fs::path input;
  fs::path bundle;
  fs::path out;
  std::optional<fs::path> trace;
  std::optional<fs::path> frames_dir;
  std::optional<fs::path> config;
  bool resize_input = false;
  Overrides flags;
};

void setup_complete(CLI::App& app, CompleteArgs& a, bool reverse) {
  auto* sub = app.add_subcommand(
      reverse ? "reverse" : "complete",
      reverse ? "Generate the sketch half for a photo" : "Generate the photo half for a sketch");
  sub->add_option(reverse ? "--photo" : "--sketch", a.input, reverse ? "Input photo PNG" : "Input sketch PNG")
      ->required();
  sub->add_option("--bundle", a.bundle, "Model bundle")->required();
  sub->add_option("--out", a.out, "Output PNG (joint image)")->required();
  sub->add_option("--trace", a.trace, "Trace CSV (default <out stem>.trace.csv)");
  sub->add_option("--frames-dir", a.frames_dir, "Frame directory (default <out stem>_frames)");
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_flag("--resize", a.resize_input, "Resize input to the bundle resolution");
  a.flags.add<std::int64_t>(sub, "--iters", "/iterations", "Projection iterations");
  a.flags.add<double>(sub, "--lambda", "/lambda", "Perceptual weight");
  a.flags.add<std::uint64_t>(sub, "--seed", "/seed", "Projection seed");
  a.flags.add<std::int64_t>(sub, "--frames-every", "/frame_every", "Keep a frame every N iterations");
  a.flags.add<std::size_t>(sub, "--candidates", "/init_candidates", "Best-of-N initial latents");
  a.flags.add<double>(sub, "--momentum", "/momentum", "Momentum");
  a.flags.add<double>(sub, "--step-size", "/step_size", "Step size");
  a.flags.add<std::string>(sub, "--clipping", "/clipping", "stochastic or hard");
  a.flags.add<std::string>(sub, "--kl", "/kl", "mass or bernoulli");
}

int run_complete(const CompleteArgs& a, bool reverse) {
  json defaults = ProjectionConfig{};
  defaults["direction"] = to_string(reverse ? Direction::image_to_sketch : Direction::sketch_to_image);
  json resolved = resolve(defaults, a.config, a.flags);
  const ProjectionConfig config = resolved.get<ProjectionConfig>();
  config.validate();
  resolved = config;

  const ModelBundle bundle = load_bundle(a.bundle);
  Image input = read_png(a.input);
  const std::size_t r = bundle.arch.height;
  if ((input.height != r || input.width != r) && a.resize_input) {
    spdlog::warn("resizing {}x{} input to {}x{}", input.height, input.width, r, r);
    input = resize(input, r, r);
  }
  resolved["input"] = a.input.string();
  resolved["bundle"] = a.bundle.string();
  resolved["bundle_fingerprint"] = bundle.fingerprint();
  echo(reverse ? "reverse" : "complete", resolved);

  const Completion c = complete(input, bundle, config, [](const ProgressEvent& e) {
    spdlog::info("iter {} contextual {:.6f} perceptual {:.6f}", e.iter, e.contextual, e.perceptual);
  });
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_png(a.out, c.output);
  const fs::path trace = a.trace ? *a.trace : with_suffix(a.out, ".trace.csv");
  write_trace_csv(trace, c.projection.trace);
  resolved["trace"] = trace.string();
  if (config.frame_every > 0) {
    const fs::path dir = a.frames_dir ? *a.frames_dir : with_suffix(a.out, "_frames");
    const auto files = write_frames(dir, a.out.stem().string(), c.projection.trace);
    resolved["frames"] = dir.string();
    spdlog::info("wrote {} frame files to {}", files.size(), dir.string());
  }
  const TraceRow& last = c.projection.trace.rows.back();
  spdlog::info("wrote {}: contextual {:.6f} (initial {:.6f})", a.out.string(), last.contextual,
               c.projection.trace.rows.front().contextual);
  write_sidecar(a.out, reverse ? "reverse" : "complete", resolved);
  return 0;
}

// -- eval ---------------------------------------------------------------------

struct EvalArgs {
  fs::path bundle;
  fs::path corpus;
  fs::path out;
  std::optional<fs::path> config;
  Overrides flags;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Score completions of a test corpus against ground truth");
  sub->add_option("--bundle", a.bundle, "Model bundle")->required();
  sub->add_option("--corpus", a.corpus, "Test corpus manifest or directory")->required();
  sub->add_option("--out", a.out, "Report directory")->required();
  sub->add_option("--config", a.config, "JSON config file");
  a.flags.add<std::size_t>(sub, "--count", "/count", "Test pairs to use (0 = all)");
  a.flags.add<std::size_t>(sub, "--jobs", "/jobs", "Parallel projections");
  a.flags.add<std::int64_t>(sub, "--iters", "/projection/iterations", "Projection iterations");
  a.flags.add<double>(sub, "--lambda", "/projection/lambda", "Perceptual weight");
  a.flags.add<std::uint64_t>(sub, "--seed", "/projection/seed", "Base projection seed");
  a.flags.add<std::string>(sub, "--style", "/style", "Style used to re-extract sketches");
  a.flags.add_flag(sub, "--montage", "/montages", true, "Write sketch | completion | truth strips");
}

int run_eval(const EvalArgs& a) {
  const Corpus corpus = load_corpus(manifest_path(a.corpus));
  json defaults = EvalConfig{};
  defaults["style"] = corpus.spec().styles.front().name;
  json resolved = resolve(defaults, a.config, a.flags);
  EvalConfig config;
  config.projection = resolved.at("projection").get<ProjectionConfig>();
  config.count = resolved.at("count").get<std::size_t>();
  config.jobs = resolved.at("jobs").get<std::size_t>();
  config.style = style_preset(resolved.at("style").get<std::string>());
  config.montages = resolved.at("montages").get<bool>();
  resolved = config;
  resolved["bundle"] = a.bundle.string();
  resolved["corpus"] = manifest_path(a.corpus).string();
  echo("eval", resolved);

  const ModelBundle bundle = load_bundle(a.bundle);
  const EvalReport report = evaluate(bundle, corpus, config);
  write_report(report, a.out);
  spdlog::info("{} samples: ssim mean {:.4f} median {:.4f}; re-extraction mean {:.4f} median {:.4f}",
               report.rows.size(), report.ssim.mean, report.ssim.median, report.reextraction.mean,
               report.reextraction.median);
  write_sidecar(a.out, "eval", resolved);
  return 0;
}

// -- serve ----------------------------------------------------------------------

struct ServeArgs {
  std::optional<fs::path> bundle;
  std::optional<fs::path> config;
  Overrides flags;
};

json serve_defaults() {
  const service::ServiceConfig d;
  return {{"host", d.host},
          {"port", d.port},
          {"workers", d.workers},
          {"max_finished_jobs", d.max_finished_jobs},
          {"cors_origin", d.cors_origin},
          {"max_iterations", d.max_iterations},
          {"projection", d.defaults}};
}

void setup_serve(CLI::App& app, ServeArgs& a) {
  auto* sub = app.add_subcommand("serve", "Run the HTTP completion service");
  sub->add_option("--bundle", a.bundle, "Model bundle (without one the API answers 503)");
  sub->add_option("--config", a.config, "JSON config file");
  a.flags.add<std::string>(sub, "--host", "/host", "Listen address");
  a.flags.add<int>(sub, "--port", "/port", "Listen port (0 = any)");
  a.flags.add<std::size_t>(sub, "--workers", "/workers", "Projection worker threads");
  a.flags.add<std::size_t>(sub, "--max-jobs", "/max_finished_jobs", "Finished jobs kept in memory");
  a.flags.add<std::string>(sub, "--origin", "/cors_origin", "Allowed CORS origin");
  a.flags.add<std::int64_t>(sub, "--max-iterations", "/max_iterations", "Per-job iteration cap");
  a.flags.add<std::int64_t>(sub, "--iters", "/projection/iterations", "Default iterations");
  a.flags.add<double>(sub, "--lambda", "/projection/lambda", "Default perceptual weight");
  a.flags.add<std::int64_t>(sub, "--progress-every", "/projection/progress_every", "Preview cadence");
}

int run_serve(const ServeArgs& a) {
  const json resolved = resolve(serve_defaults(), a.config, a.flags);
  service::ServiceConfig config;
  config.host = resolved.at("host").get<std::string>();
  config.port = resolved.at("port").get<int>();
  config.workers = resolved.at("workers").get<std::size_t>();
  config.max_finished_jobs = resolved.at("max_finished_jobs").get<std::size_t>();
  config.cors_origin = resolved.at("cors_origin").get<std::string>();
  config.max_iterations = resolved.at("max_iterations").get<std::int64_t>();
  config.defaults = resolved.at("projection").get<ProjectionConfig>();
  echo("serve", resolved);

  std::shared_ptr<const ModelBundle> bundle;
  if (a.bundle) {
    bundle = std::make_shared<const ModelBundle>(load_bundle(*a.bundle));
  } else {
    spdlog::warn("no bundle given; completion requests will get 503");
  }

  // Handle SIGINT/SIGTERM synchronously; block them before any thread starts.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::Service svc(config, bundle);
  const int port = svc.bind();
  svc.start();
  std::printf("listening on http://%s:%d\n", config.host.c_str(), port);
  std::fflush(stdout);
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {}, shutting down", sig);
  svc.stop();
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Sketch-to-image and image-to-sketch completion with a joint-image GAN", "ctxgan"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  CorpusArgs corpus_args;
  TrainArgs train_args, finetune_args;
  CompleteArgs complete_args, reverse_args;
  EvalArgs eval_args;
  ServeArgs serve_args;
  setup_corpus(app, corpus_args);
  setup_train(app, train_args);
  setup_finetune(app, finetune_args);
  setup_complete(app, complete_args, false);
  setup_complete(app, reverse_args, true);
  setup_eval(app, eval_args);
  setup_serve(app, serve_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (app.got_subcommand("corpus")) return run_corpus(corpus_args);
    if (app.got_subcommand("train")) return run_train(train_args, false);
    if (app.got_subcommand("finetune")) return run_train(finetune_args, true);
    if (app.got_subcommand("complete")) return run_complete(complete_args, false);
    if (app.got_subcommand("reverse")) return run_complete(reverse_args, true);
    if (app.got_subcommand("eval")) return run_eval(eval_args);
    if (app.got_subcommand("serve")) return run_serve(serve_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("ctxgan");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ctxgan::cli
