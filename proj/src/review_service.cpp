#include "aldot/review_service.hpp"

#include <httplib.h>

#include <algorithm>
#include <thread>

using nlohmann::json;

namespace aldot {

SessionProgress session_progress(const ReviewSession& session) {
  SessionProgress p;
  for (const auto& id : session.sampled_frame_ids) {
    const auto it = session.verdicts.find(id);
    const Verdict v = it == session.verdicts.end() ? Verdict::pending : it->second;
    if (v == Verdict::accepted) ++p.accepted;
    else if (v == Verdict::rejected) ++p.rejected;
    else ++p.pending;
  }
  if (p.accepted + p.rejected > 0)
    p.acceptance_rate = static_cast<double>(p.accepted) / static_cast<double>(p.accepted + p.rejected);
  return p;
}

namespace {

HttpReply reply(int status, const json& doc) { return {status, doc.dump(), "application/json"}; }

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::detector:
    case ErrorKind::io: return 500;
  }
  return 500;
}

HttpReply error_reply(const Error& e) {
  return reply(status_for(e.kind()), {{"error", e.what()}, {"kind", to_string(e.kind())}});
}

template <class F>
HttpReply guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return error_reply(e);
  }
}

std::string content_type_for(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  return "application/octet-stream";
}

}  // namespace

struct ReviewService::Server {
  httplib::Server http;
  std::thread worker;
};

ReviewService::ReviewService(std::filesystem::path dataset_root, std::string session_id)
    : root_(std::move(dataset_root)) {
  if (!std::filesystem::exists(root_ / "manifest.json"))
    throw NotFoundError("no dataset at " + root_.string());
  manifest_ = load_dataset(root_);
  session_ = load_review_session(root_, session_id);
}

ReviewService::~ReviewService() { stop(); }

ReviewSession ReviewService::session_snapshot() const {
  std::shared_lock lock(mutex_);
  return session_;
}

HttpReply ReviewService::get_session() const {
  std::shared_lock lock(mutex_);
  const SessionProgress p = session_progress(session_);
  return reply(200, {{"session_id", session_.session_id},
                     {"total", session_.sampled_frame_ids.size()},
                     {"pending", p.pending},
                     {"accepted", p.accepted},
                     {"rejected", p.rejected},
                     {"acceptance_rate", p.acceptance_rate ? json(*p.acceptance_rate) : json(nullptr)},
                     {"threshold", session_.confidence_threshold},
                     {"revision", session_.revision},
                     {"finalized", session_.finalized},
                     {"seed", session_.seed}});
}

json ReviewService::item_view(std::size_t index) const {
  const std::string& id = session_.sampled_frame_ids[index];
  const FrameRecord* frame = manifest_.find(id);
  const auto it = session_.verdicts.find(id);
  json boxes = json::array();
  if (frame && frame->width > 0 && frame->height > 0) {
    for (const auto& a : frame->annotations) {
      if (a.provenance == Provenance::manual) continue;
      const PixelBox pb = to_pixel(a.box, frame->width, frame->height);
      const double conf = a.box.confidence.value_or(0.0);
      boxes.push_back({{"class_id", a.box.class_id},
                       {"x_min", pb.x_min},
                       {"y_min", pb.y_min},
                       {"x_max", pb.x_max},
                       {"y_max", pb.y_max},
                       {"confidence", a.box.confidence ? json(conf) : json(nullptr)},
                       {"below_threshold", conf < session_.confidence_threshold},
                       {"provenance", to_string(a.provenance)}});
    }
  }
  return {{"frame_id", id},
          {"image_url", "/frames/" + id},
          {"width", frame ? frame->width : 0},
          {"height", frame ? frame->height : 0},
          {"status", frame ? to_string(frame->status) : "missing"},
          {"boxes", boxes},
          {"verdict", to_string(it == session_.verdicts.end() ? Verdict::pending : it->second)},
          {"position", index + 1},
          {"total", session_.sampled_frame_ids.size()}};
}

HttpReply ReviewService::list_items(std::optional<std::string_view> cursor, std::size_t limit) const {
  return guarded([&] {
    std::shared_lock lock(mutex_);
    if (limit == 0 || limit > 1000) throw ValidationError("limit must lie in [1, 1000]");
    const auto& ids = session_.sampled_frame_ids;
    std::size_t start = 0;
    if (cursor && !cursor->empty()) {
      const auto it = std::find(ids.begin(), ids.end(), *cursor);
      if (it == ids.end()) throw ValidationError("unknown cursor '" + std::string(*cursor) + "'");
      start = static_cast<std::size_t>(it - ids.begin()) + 1;
    }
    const std::size_t end = std::min(ids.size(), start + limit);
    json items = json::array();
    for (std::size_t i = start; i < end; ++i) items.push_back(item_view(i));
    return reply(200, {{"items", items},
                       {"next_cursor", end < ids.size() && end > start ? json(ids[end - 1]) : json(nullptr)},
                       {"total", ids.size()},
                       {"revision", session_.revision}});
  });
}

HttpReply ReviewService::get_item(const std::string& frame_id) const {
  return guarded([&] {
    std::shared_lock lock(mutex_);
    const auto& ids = session_.sampled_frame_ids;
    const auto it = std::find(ids.begin(), ids.end(), frame_id);
    if (it == ids.end()) throw NotFoundError("frame '" + frame_id + "' is not in the session");
    json item = item_view(static_cast<std::size_t>(it - ids.begin()));
    item["revision"] = session_.revision;
    return reply(200, item);
  });
}

HttpReply ReviewService::get_frame(const std::string& frame_id) const {
  return guarded([&] {
    std::filesystem::path path;
    {
      std::shared_lock lock(mutex_);
      const auto& ids = session_.sampled_frame_ids;
      const FrameRecord* frame = manifest_.find(frame_id);
      if (!frame || std::find(ids.begin(), ids.end(), frame_id) == ids.end())
        throw NotFoundError("frame '" + frame_id + "' is not in the session");
      path = root_ / frame->image_path;
    }
    if (!std::filesystem::exists(path)) throw NotFoundError("image for '" + frame_id + "' is missing");
    return HttpReply{200, read_file(path), content_type_for(path)};
  });
}

HttpReply ReviewService::post_verdict(const std::string& frame_id, std::string_view body) {
  return guarded([&] {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("verdict") || !doc["verdict"].is_string())
      throw ValidationError("body must be {\"verdict\": \"accepted\" | \"rejected\"}");
    const Verdict v = verdict_from_string(doc["verdict"].get<std::string>());
    if (v == Verdict::pending) throw ValidationError("verdict must be accepted or rejected");

    std::unique_lock lock(mutex_);
    ReviewSession next = session_;
    record_verdict(next, frame_id, v);
    {
      DatasetLock disk(root_);
      save_review_session(root_, next);
    }
    session_ = std::move(next);
    const SessionProgress p = session_progress(session_);
    return reply(200, {{"frame_id", frame_id},
                       {"verdict", to_string(v)},
                       {"revision", session_.revision},
                       {"pending", p.pending},
                       {"accepted", p.accepted},
                       {"rejected", p.rejected}});
  });
}

HttpReply ReviewService::finalize() {
  return guarded([&] {
    std::unique_lock lock(mutex_);
    const SessionProgress p = session_progress(session_);
    if (!session_.complete()) {
      return reply(409, {{"error", "session has pending frames"},
                         {"kind", "conflict"},
                         {"pending", session_.pending_frame_ids()}});
    }
    json out = {{"finalized", true},
                {"acceptance_rate", p.acceptance_rate ? json(*p.acceptance_rate) : json(nullptr)},
                {"accepted_frames", p.accepted},
                {"rejected_frames", p.rejected},
                {"revision", session_.revision}};
    if (session_.finalized) {
      out["already_finalized"] = true;
      return reply(200, out);
    }
    DatasetLock disk(root_);
    const ApplyResult applied = apply_verdicts(load_dataset(root_), session_);
    save_dataset(root_, applied.manifest);
    ReviewSession next = session_;
    next.finalized = true;
    save_review_session(root_, next);
    session_ = std::move(next);
    manifest_ = applied.manifest;
    out["boxes_accepted"] = applied.boxes_accepted;
    out["boxes_rejected"] = applied.boxes_rejected;
    out["already_finalized"] = false;
    return reply(200, out);
  });
}

void ReviewService::set_static_dir(std::filesystem::path dir) { static_dir_ = std::move(dir); }

namespace {

void send(httplib::Response& res, const HttpReply& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

int ReviewService::bind(const std::string& host, int port) {
  if (server_) throw ConflictError("review service is already bound");
  server_ = std::make_unique<Server>();
  auto& http = server_->http;

  http.Get("/api/session", [this](const httplib::Request& req, httplib::Response& res) {
    if (req.has_param("session_id") && req.get_param_value("session_id") != session_snapshot().session_id) {
      send(res, reply(404, {{"error", "unknown session"}, {"kind", "not_found"}}));
      return;
    }
    send(res, get_session());
  });
  http.Get("/api/items", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> cursor;
    if (req.has_param("cursor")) cursor = req.get_param_value("cursor");
    std::size_t limit = 50;
    if (req.has_param("limit")) {
      try {
        limit = std::stoul(req.get_param_value("limit"));
      } catch (const std::exception&) {
        send(res, reply(400, {{"error", "limit must be an integer"}, {"kind", "validation"}}));
        return;
      }
    }
    send(res, list_items(cursor ? std::optional<std::string_view>(*cursor) : std::nullopt, limit));
  });
  http.Get(R"(/api/items/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, get_item(req.matches[1]));
  });
  http.Get(R"(/frames/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, get_frame(req.matches[1]));
  });
  http.Post(R"(/api/items/([^/]+)/verdict)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, post_verdict(req.matches[1], req.body));
  });
  http.Post("/api/session/finalize", [this](const httplib::Request&, httplib::Response& res) {
    send(res, finalize());
  });
  if (static_dir_ && !http.set_mount_point("/", static_dir_->string()))
    throw NotFoundError("static directory " + static_dir_->string() + " does not exist");

  int bound = port;
  if (port == 0) {
    bound = http.bind_to_any_port(host);
  } else if (!http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    server_.reset();
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void ReviewService::listen() {
  if (!server_) throw ConflictError("review service is not bound");
  server_->http.listen_after_bind();
}

void ReviewService::start() {
  if (!server_) throw ConflictError("review service is not bound");
  server_->worker = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
}

void ReviewService::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->worker.joinable()) server_->worker.join();
  server_.reset();
}

}  // namespace aldot
