#include "aldot/external_detector.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>
#include <regex>

#include <httplib.h>

extern char** environ;

namespace aldot {
namespace {

using Clock = std::chrono::steady_clock;
using Reason = DetectorError::Reason;

constexpr std::size_t kMaxLine = 16u << 20;

struct HttpTarget {
  std::string host;
  int port = 80;
  std::string path = "/";
};

HttpTarget parse_url(const std::string& url) {
  static const std::regex re(R"(^http://([^/:]+)(?::(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re))
    throw ValidationError("external detector URL must look like http://host[:port]/path, got '" +
                          url + "'");
  HttpTarget t;
  t.host = m[1];
  if (m[2].matched) t.port = std::stoi(m[2]);
  if (m[3].matched) t.path = m[3];
  return t;
}

class ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ValidationError("external detector command is empty");
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0)
      throw DetectorError(Reason::launch, std::string("pipe: ") + std::strerror(errno));

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

    std::vector<char*> cargv;
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, cargv[0], &actions, nullptr, cargv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      throw DetectorError(Reason::launch,
                          "cannot launch '" + argv[0] + "': " + std::strerror(rc));
    }
    in_ = to_child[1];
    out_ = from_child[0];
  }

  ~ChildProcess() { terminate(); }
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  void write_line(const std::string& line) {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(in_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw DetectorError(Reason::exited, "detector closed its input: " + exit_description());
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  std::string read_line(Clock::time_point deadline) {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (buffer_.size() > kMaxLine)
        throw DetectorError(Reason::protocol, "detector response exceeds 16 MiB without newline");
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (remaining <= 0) throw DetectorError(Reason::timeout, "detector response timed out");
      pollfd pfd{out_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(remaining));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw DetectorError(Reason::transport, std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) throw DetectorError(Reason::timeout, "detector response timed out");
      char chunk[65536];
      const ssize_t n = ::read(out_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw DetectorError(Reason::transport, std::string("read: ") + std::strerror(errno));
      }
      if (n == 0) throw DetectorError(Reason::exited, "detector exited: " + exit_description());
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Closes stdin, gives the child a moment to exit, then kills it.
  void terminate() {
    if (in_ >= 0) ::close(std::exchange(in_, -1));
    if (pid_ > 0 && !status_) {
      const auto deadline = Clock::now() + std::chrono::milliseconds(500);
      while (Clock::now() < deadline && !try_reap()) ::usleep(2000);
      if (!status_) {
        ::kill(pid_, SIGKILL);
        int st = 0;
        ::waitpid(pid_, &st, 0);
        status_ = st;
      }
    }
    if (out_ >= 0) ::close(std::exchange(out_, -1));
  }

 private:
  bool try_reap() {
    int st = 0;
    const pid_t r = ::waitpid(pid_, &st, WNOHANG);
    if (r == pid_) status_ = st;
    return status_.has_value();
  }

  std::string exit_description() {
    const auto deadline = Clock::now() + std::chrono::milliseconds(200);
    while (Clock::now() < deadline && !try_reap()) ::usleep(1000);
    if (!status_) return "stream closed";
    if (WIFEXITED(*status_)) return "exit status " + std::to_string(WEXITSTATUS(*status_));
    if (WIFSIGNALED(*status_)) return "killed by signal " + std::to_string(WTERMSIG(*status_));
    return "terminated";
  }

  pid_t pid_ = -1;
  int in_ = -1;
  int out_ = -1;
  std::string buffer_;
  std::optional<int> status_;
};

}  // namespace

struct ExternalDetector::Impl {
  ExternalDetectorConfig config;
  std::unique_ptr<ChildProcess> child;
  std::optional<HttpTarget> http;
  bool failed = false;
};

ExternalDetector::ExternalDetector(ExternalDetectorConfig config) : impl_(std::make_unique<Impl>()) {
  if (config.timeout.count() <= 0) throw ValidationError("detector timeout must be positive");
  impl_->config = std::move(config);
  if (impl_->config.transport == ExternalDetectorConfig::Transport::http) {
    impl_->http = parse_url(impl_->config.url);
  } else {
    // A dead child must surface as EPIPE, not kill this process.
    ::signal(SIGPIPE, SIG_IGN);
    impl_->child = std::make_unique<ChildProcess>(impl_->config.command);
  }
}

ExternalDetector::~ExternalDetector() { shutdown(); }

void ExternalDetector::shutdown() {
  if (impl_ && impl_->child) impl_->child->terminate();
}

std::vector<Detection> ExternalDetector::detect(const FrameRequest& frame,
                                                std::span<const BoundingBox>) {
  if (impl_->failed)
    throw DetectorError(Reason::transport, "external detector is unusable after an earlier failure");
  const std::string request = request_to_json(frame).dump();
  const auto start = Clock::now();
  try {
    std::string payload;
    if (impl_->http) {
      httplib::Client client(impl_->http->host, impl_->http->port);
      const auto t = impl_->config.timeout;
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(t).count(),
                                    static_cast<time_t>((t.count() % 1000) * 1000));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(t).count(),
                              static_cast<time_t>((t.count() % 1000) * 1000));
      const auto res = client.Post(impl_->http->path, request, "application/json");
      if (!res) {
        const auto err = res.error();
        const Reason why = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout
                               ? Reason::timeout
                               : Reason::transport;
        throw DetectorError(why, "HTTP detector request failed: " + httplib::to_string(err));
      }
      if (res->status != 200)
        throw DetectorError(Reason::protocol,
                            "HTTP detector answered status " + std::to_string(res->status));
      payload = res->body;
    } else {
      impl_->child->write_line(request);
      payload = impl_->child->read_line(start + impl_->config.timeout);
    }
    const double latency = std::chrono::duration<double>(Clock::now() - start).count();
    return parse_response(payload, frame.frame_id, latency);
  } catch (const DetectorError&) {
    impl_->failed = true;
    if (impl_->child) impl_->child->terminate();
    throw;
  }
}

void run_external_detector(
    const ExternalDetectorConfig& config, std::span<const FrameRequest> frames,
    const std::function<void(const FrameRequest&, std::vector<Detection>)>& sink) {
  ExternalDetector detector(config);
  for (const auto& frame : frames) sink(frame, detector.detect(frame, {}));
  detector.shutdown();
}

std::vector<std::vector<Detection>> run_external_detector(const ExternalDetectorConfig& config,
                                                          std::span<const FrameRequest> frames) {
  std::vector<std::vector<Detection>> out;
  out.reserve(frames.size());
  run_external_detector(config, frames,
                        [&](const FrameRequest&, std::vector<Detection> d) { out.push_back(std::move(d)); });
  return out;
}

}  // namespace aldot
