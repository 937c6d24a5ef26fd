#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldot/dataset.hpp"

namespace aldot {

// ---- normal distribution ---------------------------------------------------

/// Standard normal CDF.
double normal_cdf(double z);

/// Inverse of normal_cdf. Rational approximation polished with one Newton
/// step; |normal_cdf(normal_quantile(p)) - p| <= 1e-6. Requires 0 < p < 1.
double normal_quantile(double p);

/// Smallest n with z * sigma / sqrt(n) <= margin, z the two-sided quantile at
/// `confidence_level`: n = ceil((z * sigma / margin)^2).
std::int64_t required_sample_size(double sigma, double margin, double confidence_level);

// ---- sampling ----------------------------------------------------------------

enum class SamplingStrategy { uniform_random, scenario_shift_marked };

const char* to_string(SamplingStrategy s) noexcept;
SamplingStrategy sampling_strategy_from_string(std::string_view text);

/// Review size used when no population sigma is supplied.
inline constexpr std::int64_t kDefaultReviewSampleSize = 100;

struct SamplingPlan {
  std::int64_t population_size = 0;
  std::int64_t sample_size = 0;
  double confidence_level = 0.95;
  double margin_of_error = 0.05;
  std::optional<double> population_sigma;
  SamplingStrategy strategy = SamplingStrategy::uniform_random;
  /// Scenario-shift strategy fails instead of falling back when nothing is marked.
  bool strict = false;

  bool operator==(const SamplingPlan&) const = default;
};

void validate(const SamplingPlan& plan);

/// Sizes a plan: required_sample_size when sigma is given, otherwise the
/// default of 100, capped at the population.
SamplingPlan make_sampling_plan(std::int64_t population_size, std::optional<double> sigma,
                                double margin, double confidence_level,
                                SamplingStrategy strategy);

/// Seeded selection of frame ids, returned in manifest order without repeats.
std::vector<std::string> sample_frames(const DatasetManifest& manifest, const SamplingPlan& plan,
                                       std::uint64_t seed);

// ---- CLT diagnostic ----------------------------------------------------------

struct StatSummary {
  double population_mean = 0.0;
  double population_sigma = 0.0;
  std::int64_t sample_size = 0;
  std::int64_t trials = 0;
  double sample_mean_mean = 0.0;
  double sample_mean_sigma = 0.0;
  /// z * sigma / sqrt(n) at the 95% level.
  double band_half_width = 0.0;
  /// Fraction of trials whose sample mean landed within the band.
  double within_band_fraction = 0.0;
  /// Mean and spread of (S_n - n mu) / (sigma sqrt(n)); absent when sigma = 0.
  std::optional<double> standardized_mean;
  std::optional<double> standardized_sigma;
};

/// Draws `trials` samples of `sample_size` values without replacement and
/// reports how sample means concentrate around the population mean.
StatSummary clt_diagnostic(std::span<const double> values, std::int64_t sample_size,
                           std::int64_t trials, std::uint64_t seed);

// ---- confidence filter -----------------------------------------------------

struct FilterResult {
  std::vector<Annotation> kept;
  std::vector<Annotation> dropped;
};

/// Manual boxes are always kept; others need confidence >= threshold.
/// Input order is preserved within both halves.
FilterResult filter_by_confidence(std::span<const Annotation> annotations, double threshold);

// ---- review sessions ---------------------------------------------------------

enum class Verdict { pending, accepted, rejected };

const char* to_string(Verdict v) noexcept;
Verdict verdict_from_string(std::string_view text);

/// Confidence floor applied with the review.
inline constexpr double kDefaultConfidenceThreshold = 0.95;

struct ReviewSession {
  std::string session_id;
  SamplingPlan plan;
  std::vector<std::string> sampled_frame_ids;
  std::map<std::string, Verdict> verdicts;
  double confidence_threshold = kDefaultConfidenceThreshold;
  std::uint64_t seed = 0;
  std::uint64_t revision = 0;
  bool finalized = false;
  std::string created_at;

  bool complete() const;
  std::vector<std::string> pending_frame_ids() const;

  bool operator==(const ReviewSession&) const = default;
};

/// Builds a fresh session with every sampled frame pending.
ReviewSession create_review_session(const DatasetManifest& manifest, const SamplingPlan& plan,
                                    std::uint64_t seed, double confidence_threshold,
                                    std::string session_id);

/// Records a verdict and bumps the revision. Throws ConflictError on a
/// finalized session and NotFoundError for frames outside the sample.
void record_verdict(ReviewSession& session, const std::string& frame_id, Verdict verdict);

struct ApplyResult {
  DatasetManifest manifest;
  std::optional<double> acceptance_rate;
  std::int64_t accepted_frames = 0;
  std::int64_t rejected_frames = 0;
  std::int64_t boxes_accepted = 0;
  std::int64_t boxes_rejected = 0;
};

/// Moves automatic boxes on sampled frames to reviewed-accepted (accepted
/// frame, confidence >= threshold) or reviewed-rejected (rejected frame, or
/// below threshold). Unsampled frames keep their automatic boxes, and the
/// returned manifest's label_threshold is set so labels/ omits automatic
/// boxes under the floor. Pure: the input is not modified.
ApplyResult apply_verdicts(const DatasetManifest& manifest, const ReviewSession& session);

nlohmann::json to_json(const ReviewSession& session);
ReviewSession review_session_from_json(const nlohmann::json& doc);

/// reviews/<session_id>.json under the dataset root.
std::filesystem::path review_session_path(const std::filesystem::path& root,
                                          const std::string& session_id);
ReviewSession load_review_session(const std::filesystem::path& root, const std::string& session_id);
void save_review_session(const std::filesystem::path& root, const ReviewSession& session);

}  // namespace aldot
