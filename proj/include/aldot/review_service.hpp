#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "aldot/assurance.hpp"
#include "aldot/dataset.hpp"
#include "aldot/error.hpp"

namespace aldot {

struct SessionProgress {
  std::int64_t pending = 0;
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  /// accepted / (accepted + rejected); absent until something is decided.
  std::optional<double> acceptance_rate;
};

SessionProgress session_progress(const ReviewSession& session);

/// Status code, body and content type of one API response.
struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// Serves one review session of one dataset.
///
///   GET  /api/session                    progress, threshold, revision
///   GET  /api/items?cursor=&limit=       page of items in sample order
///   GET  /api/items/<frame_id>           one item
///   GET  /frames/<frame_id>              image bytes as stored
///   POST /api/items/<frame_id>/verdict   {"verdict": "accepted" | "rejected"}
///   POST /api/session/finalize           apply verdicts and rewrite the dataset
///
/// Item boxes are pixel corners from to_pixel. The handler methods are the
/// API; the HTTP server only routes to them.
class ReviewService {
 public:
  /// Loads the dataset and session; NotFoundError if either is absent.
  ReviewService(std::filesystem::path dataset_root, std::string session_id);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  HttpReply get_session() const;
  HttpReply list_items(std::optional<std::string_view> cursor, std::size_t limit) const;
  HttpReply get_item(const std::string& frame_id) const;
  HttpReply get_frame(const std::string& frame_id) const;
  HttpReply post_verdict(const std::string& frame_id, std::string_view body);
  HttpReply finalize();

  /// Static files (the browser client) served under "/".
  void set_static_dir(std::filesystem::path dir);

  /// Binds the listener; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  /// Starts serving on a background thread; call after bind().
  void start();
  void stop();

  ReviewSession session_snapshot() const;

 private:
  nlohmann::json item_view(std::size_t index) const;

  std::filesystem::path root_;
  DatasetManifest manifest_;
  ReviewSession session_;
  std::optional<std::filesystem::path> static_dir_;
  mutable std::shared_mutex mutex_;

  struct Server;
  std::unique_ptr<Server> server_;
};

}  // namespace aldot
