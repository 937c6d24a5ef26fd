#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aldot/detection.hpp"

namespace aldot {

struct ExternalDetectorConfig {
  enum class Transport { process, http };

  Transport transport = Transport::process;
  /// argv for the process transport; argv[0] is looked up on PATH.
  std::vector<std::string> command;
  /// http://host[:port]/path for the HTTP transport.
  std::string url;
  std::chrono::milliseconds timeout{2000};
};

/// Client for a detector living in another process. The process transport
/// speaks newline-delimited JSON over the child's stdin/stdout; the HTTP
/// transport POSTs one request document per frame. Requests are answered in
/// order; any failure leaves the client unusable and raises DetectorError.
class ExternalDetector final : public Detector {
 public:
  explicit ExternalDetector(ExternalDetectorConfig config);
  ~ExternalDetector() override;
  ExternalDetector(const ExternalDetector&) = delete;
  ExternalDetector& operator=(const ExternalDetector&) = delete;

  std::vector<Detection> detect(const FrameRequest& frame,
                                std::span<const BoundingBox> truth) override;

  /// Closes the child's stdin and reaps it. Idempotent.
  void shutdown();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Streams `frames` through an external detector, handing each response to
/// `sink` in request order.
void run_external_detector(
    const ExternalDetectorConfig& config, std::span<const FrameRequest> frames,
    const std::function<void(const FrameRequest&, std::vector<Detection>)>& sink);

std::vector<std::vector<Detection>> run_external_detector(const ExternalDetectorConfig& config,
                                                          std::span<const FrameRequest> frames);

}  // namespace aldot
