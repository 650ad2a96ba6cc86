#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ctxgan/model.hpp"
#include "ctxgan/projection.hpp"

namespace ctxgan::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  std::size_t workers = 1;
  /// Finished jobs kept before the least recently read one is dropped.
  std::size_t max_finished_jobs = 64;
  std::string cors_origin = "*";
  std::int64_t max_iterations = 5000;
  /// Base settings for every job; requests may override lambda,
  /// iterations, seed, direction and progress_every.
  ProjectionConfig defaults;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Accepts an optional data-URL prefix and embedded whitespace; throws
/// FormatError on anything else that is not base64.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// HTTP facade over complete(). Projections run on a worker pool; handlers
/// only touch the job store, so status reads never wait on a projection.
///
///   GET  /api/meta
///   POST /api/complete            {"image": base64 PNG, "lambda", "iterations",
///                                  "seed", "direction", "progress_every", "previews"}
///   GET  /api/jobs/{id}
///   GET  /api/jobs/{id}/events    server-sent events, or JSON with ?format=json
///   GET  /api/jobs/{id}/result    PNG of the composited joint image
class Service {
 public:
  /// A null bundle starts the server in a degraded mode that answers 503.
  Service(ServiceConfig config, std::shared_ptr<const ModelBundle> bundle);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds host:port and returns the bound port. Throws on failure.
  int bind();
  /// Serves on a background thread after bind().
  void start();
  /// Serves on the calling thread until stop(); binds first if needed.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ctxgan::service
