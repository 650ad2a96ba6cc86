#include "service/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctxgan/errors.hpp"
#include "ctxgan/image.hpp"

namespace ctxgan::service {

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.substr(0, 5) == "data:") {
    const auto comma = text.find(',');
    if (comma == std::string_view::npos || text.substr(0, comma).find(";base64") == std::string_view::npos) {
      throw FormatError("base64: data URL without a base64 payload");
    }
    text.remove_prefix(comma + 1);
  }
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    clean.push_back(c);
  }
  if (clean.empty() || clean.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw FormatError("base64: invalid character");
  std::size_t pad = 0;
  if (clean.back() == '=') ++pad;
  if (clean.size() >= 2 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

enum class JobState { queued, running, done, failed };

const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

struct JobEvent {
  std::int64_t iter = 0;
  double contextual = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
  std::string preview;  ///< data URL, empty when previews are off
};

struct Job {
  std::string id;
  ProjectionConfig config;
  Image input;
  bool resized = false;
  bool previews = true;

  JobState state = JobState::queued;
  std::int64_t progress = 0;
  std::vector<JobEvent> events;
  std::vector<std::uint8_t> result_png;
  std::string error;

  bool finished() const { return state == JobState::done || state == JobState::failed; }
};

nlohmann::json event_json(const JobEvent& e, bool with_preview) {
  nlohmann::json j{{"iter", e.iter},
                   {"contextual", e.contextual},
                   {"perceptual", e.perceptual},
                   {"total", e.total}};
  if (with_preview && !e.preview.empty()) j["preview"] = e.preview;
  return j;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<const ModelBundle> bundle;
  httplib::Server server;
  int port = -1;
  std::thread listener;

  std::mutex mu;
  std::condition_variable changed;  ///< any job update, new work or shutdown
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::deque<std::shared_ptr<Job>> pending;
  std::list<std::string> finished_lru;  ///< front = least recently read
  bool stopping = false;
  std::vector<std::thread> workers;
  std::mt19937_64 id_rng{std::random_device{}()};
  std::uint64_t id_counter = 0;

  Impl(ServiceConfig c, std::shared_ptr<const ModelBundle> b)
      : config(std::move(c)), bundle(std::move(b)) {
    // SSE streams hold a connection thread each; leave room for them.
    server.new_task_queue = [] { return new httplib::ThreadPool(16); };
    routes();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, config.workers); ++i) {
      workers.emplace_back([this] { work(); });
    }
  }

  ~Impl() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mu);
      if (stopping) return;
      stopping = true;
    }
    changed.notify_all();
    server.stop();
    if (listener.joinable()) listener.join();
    for (auto& w : workers) w.join();
  }

  std::shared_ptr<Job> find(const std::string& id) {
    const auto it = jobs.find(id);
    if (it == jobs.end()) return nullptr;
    if (it->second->finished()) {
      finished_lru.remove(id);
      finished_lru.push_back(id);
    }
    return it->second;
  }

  void mark_finished(const std::shared_ptr<Job>& job) {
    finished_lru.push_back(job->id);
    while (finished_lru.size() > config.max_finished_jobs) {
      jobs.erase(finished_lru.front());
      finished_lru.pop_front();
    }
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mu);
        changed.wait(lock, [&] { return stopping || !pending.empty(); });
        if (stopping) return;
        job = pending.front();
        pending.pop_front();
        job->state = JobState::running;
      }
      changed.notify_all();
      try {
        const Completion c = complete(job->input, *bundle, job->config, [&](const ProgressEvent& e) {
          JobEvent ev{e.iter, e.contextual, e.perceptual, e.contextual + job->config.lambda * e.perceptual, {}};
          if (job->previews && e.preview != nullptr) {
            ev.preview = "data:image/png;base64," + base64_encode(encode_png(*e.preview));
          }
          {
            std::lock_guard lock(mu);
            job->events.push_back(std::move(ev));
            job->progress = e.iter;
          }
          changed.notify_all();
        });
        std::vector<std::uint8_t> png = encode_png(c.output);
        std::lock_guard lock(mu);
        job->result_png = std::move(png);
        job->progress = job->config.iterations;
        job->state = JobState::done;
        mark_finished(job);
      } catch (const std::exception& e) {
        spdlog::error("job {} failed: {}", job->id, e.what());
        std::lock_guard lock(mu);
        job->error = e.what();
        job->state = JobState::failed;
        mark_finished(job);
      }
      changed.notify_all();
    }
  }

  std::string new_id() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%012llx%04llx", static_cast<unsigned long long>(id_rng() >> 16),
                  static_cast<unsigned long long>(++id_counter & 0xffff));
    return buf;
  }

  nlohmann::json status_json(const Job& job) const {
    nlohmann::json trace = nlohmann::json::array();
    for (const JobEvent& e : job.events) trace.push_back(event_json(e, false));
    nlohmann::json j{{"id", job.id},
                     {"state", to_string(job.state)},
                     {"progress", job.progress},
                     {"iterations", job.config.iterations},
                     {"direction", to_string(job.config.direction)},
                     {"seed", job.config.seed},
                     {"lambda", job.config.lambda},
                     {"progress_every", job.config.progress_every},
                     {"resized", job.resized},
                     {"events", job.events.size()},
                     {"trace", trace},
                     {"latest", job.events.empty() ? nlohmann::json(nullptr)
                                                    : event_json(job.events.back(), false)}};
    if (job.state == JobState::failed) j["error"] = job.error;
    return j;
  }

  void handle_meta(httplib::Response& res) {
    if (!bundle) return send_error(res, 503, "no bundle loaded");
    const ProjectionConfig& d = config.defaults;
    send_json(res, 200,
              {{"descriptor", bundle->descriptor()},
               {"resolution",
                {{"height", bundle->arch.height},
                 {"width", bundle->arch.width},
                 {"context_height", bundle->arch.height},
                 {"context_width", bundle->arch.half_width()}}},
               {"style", bundle->style},
               {"directions", {to_string(Direction::sketch_to_image), to_string(Direction::image_to_sketch)}},
               {"defaults",
                {{"lambda", d.lambda},
                 {"iterations", d.iterations},
                 {"seed", d.seed},
                 {"direction", to_string(d.direction)},
                 {"progress_every", d.progress_every}}},
               {"max_iterations", config.max_iterations}});
  }

  void handle_complete(const httplib::Request& req, httplib::Response& res) {
    if (!bundle) return send_error(res, 503, "no bundle loaded");
    if (req.body.empty()) return send_error(res, 400, "empty body");
    auto job = std::make_shared<Job>();
    job->config = config.defaults;
    try {
      const nlohmann::json body = nlohmann::json::parse(req.body);
      if (!body.is_object()) throw ArgumentError("body must be a JSON object");
      std::string encoded;
      if (body.contains("image")) {
        encoded = body.at("image").get<std::string>();
      } else if (body.contains("sketch")) {
        encoded = body.at("sketch").get<std::string>();
      } else {
        throw ArgumentError("missing 'image'");
      }
      ProjectionConfig& c = job->config;
      c.lambda = body.value("lambda", c.lambda);
      c.iterations = body.value("iterations", c.iterations);
      c.seed = body.value("seed", c.seed);
      c.progress_every = body.value("progress_every", c.progress_every);
      if (body.contains("direction")) c.direction = parse_direction(body.at("direction").get<std::string>());
      job->previews = body.value("previews", true);
      if (c.iterations > config.max_iterations) {
        throw ArgumentError("iterations exceed the server limit of " + std::to_string(config.max_iterations));
      }
      c.validate();

      Image img = decode_png(base64_decode(encoded));
      const std::size_t r = bundle->arch.height;
      if (img.height != r || img.width != r) {
        spdlog::warn("resizing {}x{} upload to {}x{}", img.height, img.width, r, r);
        img = resize(img, r, r);
        job->resized = true;
      }
      job->input = std::move(img);
    } catch (const nlohmann::json::exception& e) {
      return send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
      return send_error(res, 400, e.what());
    }
    {
      std::lock_guard lock(mu);
      job->id = new_id();
      jobs[job->id] = job;
      pending.push_back(job);
    }
    changed.notify_all();
    const std::string base = "/api/jobs/" + job->id;
    send_json(res, 202,
              {{"id", job->id},
               {"resized", job->resized},
               {"status_url", base},
               {"events_url", base + "/events"},
               {"result_url", base + "/result"}});
  }

  void handle_status(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    const auto job = find(req.path_params.at("id"));
    if (!job) return send_error(res, 404, "unknown job");
    send_json(res, 200, status_json(*job));
  }

  void handle_result(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    const auto job = find(req.path_params.at("id"));
    if (!job) return send_error(res, 404, "unknown job");
    if (job->state != JobState::done) {
      nlohmann::json body{{"error", "result not available"}, {"state", to_string(job->state)}};
      if (job->state == JobState::failed) body["detail"] = job->error;
      return send_json(res, 409, body);
    }
    res.status = 200;
    res.set_content(reinterpret_cast<const char*>(job->result_png.data()), job->result_png.size(),
                    "image/png");
  }

  void handle_events(const httplib::Request& req, httplib::Response& res) {
    std::size_t since = 0;
    try {
      if (req.has_param("since")) since = std::stoul(req.get_param_value("since"));
      if (req.has_header("Last-Event-ID")) since = std::stoul(req.get_header_value("Last-Event-ID")) + 1;
    } catch (const std::exception&) {
      return send_error(res, 400, "bad event offset");
    }
    std::shared_ptr<Job> job;
    {
      std::lock_guard lock(mu);
      job = find(req.path_params.at("id"));
      if (!job) return send_error(res, 404, "unknown job");
      if (req.get_param_value("format") == "json") {
        nlohmann::json events = nlohmann::json::array();
        for (std::size_t i = since; i < job->events.size(); ++i) {
          events.push_back(event_json(job->events[i], job->previews));
        }
        return send_json(res, 200, {{"state", to_string(job->state)},
                                    {"progress", job->progress},
                                    {"next", job->events.size()},
                                    {"events", events}});
      }
    }
    res.set_header("Cache-Control", "no-cache");
    auto next = std::make_shared<std::size_t>(since);
    res.set_chunked_content_provider(
        "text/event-stream", [this, job, next](std::size_t, httplib::DataSink& sink) {
          std::unique_lock lock(mu);
          changed.wait_for(lock, std::chrono::seconds(10), [&] {
            return stopping || job->events.size() > *next || job->finished();
          });
          if (stopping) {
            sink.done();
            return true;
          }
          std::string out;
          for (; *next < job->events.size(); ++*next) {
            out += "id: " + std::to_string(*next) + "\nevent: progress\ndata: " +
                   event_json(job->events[*next], job->previews).dump() + "\n\n";
          }
          const bool end = job->finished();
          if (end) {
            out += std::string("event: ") + to_string(job->state) + "\ndata: " + status_json(*job).dump() + "\n\n";
          }
          lock.unlock();
          if (out.empty()) out = ": keep-alive\n\n";
          if (!sink.write(out.data(), out.size())) return false;
          if (end) sink.done();
          return true;
        });
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/api/meta", [this](const httplib::Request&, httplib::Response& res) { handle_meta(res); });
    server.Post("/api/complete", [this](const httplib::Request& req, httplib::Response& res) {
      handle_complete(req, res);
    });
    server.Get("/api/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
      handle_status(req, res);
    });
    server.Get("/api/jobs/:id/events", [this](const httplib::Request& req, httplib::Response& res) {
      handle_events(req, res);
    });
    server.Get("/api/jobs/:id/result", [this](const httplib::Request& req, httplib::Response& res) {
      handle_result(req, res);
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send_error(res, 500, what);
    });
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<const ModelBundle> bundle)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(bundle))) {
  impl_->config.defaults.validate();
}

Service::~Service() = default;

int Service::bind() {
  if (impl_->port >= 0) return impl_->port;
  if (impl_->config.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
    impl_->port = impl_->config.port;
  }
  if (impl_->port < 0) {
    throw std::runtime_error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
  return impl_->port;
}

void Service::start() {
  bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::run() {
  bind();
  impl_->server.listen_after_bind();
}

void Service::stop() { impl_->shutdown(); }

}  // namespace ctxgan::service
