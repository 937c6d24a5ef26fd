#include "aldot/assurance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "aldot/error.hpp"
#include "aldot/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aldot {

// ---- normal distribution ---------------------------------------------------

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("normal_quantile: p must lie strictly inside (0, 1)");

  // Acklam's rational approximation, relative error ~1.15e-9 before polishing.
  static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02,
                                           -2.759285104469687e+02, 1.383577518672690e+02,
                                           -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02,
                                           -1.556989798598866e+02, 6.680131188771972e+01,
                                           -1.328068155288572e+01};
  static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01,
                                           -2.400758277161838e+00, -2.549671010422160e+00,
                                           4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01,
                                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  if (density > 0.0) x -= (normal_cdf(x) - p) / density;
  return x;
}

std::int64_t required_sample_size(double sigma, double margin, double confidence_level) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw ValidationError("required_sample_size: sigma must be positive");
  if (!(margin > 0.0) || !std::isfinite(margin))
    throw ValidationError("required_sample_size: margin must be positive");
  if (!(confidence_level > 0.0 && confidence_level < 1.0))
    throw ValidationError("required_sample_size: confidence level must lie in (0, 1)");
  const double z = normal_quantile(0.5 + confidence_level / 2.0);
  const double root = z * sigma / margin;
  const double exact = root * root;
  // Shave rounding noise so an exact integer bound does not round up.
  const double n = std::ceil(exact * (1.0 - 1e-12));
  if (n > 9.0e18) throw ValidationError("required_sample_size: result overflows");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
}

// ---- sampling ----------------------------------------------------------------

const char* to_string(SamplingStrategy s) noexcept {
  switch (s) {
    case SamplingStrategy::uniform_random: return "uniform-random";
    case SamplingStrategy::scenario_shift_marked: return "scenario-shift-marked";
  }
  return "unknown";
}

SamplingStrategy sampling_strategy_from_string(std::string_view text) {
  if (text == "uniform-random" || text == "uniform") return SamplingStrategy::uniform_random;
  if (text == "scenario-shift-marked" || text == "scenario-shift")
    return SamplingStrategy::scenario_shift_marked;
  throw ValidationError("unknown sampling strategy '" + std::string(text) + "'");
}

void validate(const SamplingPlan& plan) {
  if (plan.population_size < 1) throw ValidationError("sampling plan: empty population");
  if (plan.sample_size < 1 || plan.sample_size > plan.population_size)
    throw ValidationError("sampling plan: sample size " + std::to_string(plan.sample_size) +
                          " outside [1, " + std::to_string(plan.population_size) + "]");
  if (!(plan.confidence_level > 0.0 && plan.confidence_level < 1.0))
    throw ValidationError("sampling plan: confidence level must lie in (0, 1)");
  if (!(plan.margin_of_error > 0.0)) throw ValidationError("sampling plan: margin must be positive");
  if (plan.population_sigma && !(*plan.population_sigma >= 0.0))
    throw ValidationError("sampling plan: sigma must be non-negative");
}

SamplingPlan make_sampling_plan(std::int64_t population_size, std::optional<double> sigma,
                                double margin, double confidence_level,
                                SamplingStrategy strategy) {
  SamplingPlan plan;
  plan.population_size = population_size;
  plan.margin_of_error = margin;
  plan.confidence_level = confidence_level;
  plan.population_sigma = sigma;
  plan.strategy = strategy;
  const std::int64_t wanted = sigma && *sigma > 0.0
                                  ? required_sample_size(*sigma, margin, confidence_level)
                                  : kDefaultReviewSampleSize;
  plan.sample_size = std::min(wanted, population_size);
  validate(plan);
  return plan;
}

namespace {

/// First `count` entries of `pool` become a uniform sample (partial Fisher-Yates).
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
}

std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  partial_shuffle(pool, count, rng);
  pool.resize(count);
  return pool;
}

}  // namespace

std::vector<std::string> sample_frames(const DatasetManifest& manifest, const SamplingPlan& plan,
                                       std::uint64_t seed) {
  validate(plan);
  const std::size_t population = manifest.frames.size();
  if (static_cast<std::size_t>(plan.population_size) != population)
    throw ValidationError("sampling plan population " + std::to_string(plan.population_size) +
                          " does not match manifest size " + std::to_string(population));
  const auto n = static_cast<std::size_t>(plan.sample_size);
  Rng rng(mix_seed(seed));

  std::vector<std::size_t> picked;
  std::vector<std::size_t> marked;
  std::vector<std::size_t> unmarked;
  for (std::size_t i = 0; i < population; ++i)
    (manifest.frames[i].scenario_shift ? marked : unmarked).push_back(i);

  if (plan.strategy == SamplingStrategy::scenario_shift_marked && !marked.empty()) {
    if (marked.size() >= n) {
      picked = choose(std::move(marked), n, rng);
    } else {
      picked = marked;
      const auto extra = choose(std::move(unmarked), n - picked.size(), rng);
      picked.insert(picked.end(), extra.begin(), extra.end());
    }
  } else {
    if (plan.strategy == SamplingStrategy::scenario_shift_marked && plan.strict)
      throw ValidationError("scenario-shift sampling: no frames are marked as scenario shifts");
    std::vector<std::size_t> all(population);
    std::iota(all.begin(), all.end(), std::size_t{0});
    picked = choose(std::move(all), n, rng);
  }

  std::sort(picked.begin(), picked.end());
  std::vector<std::string> ids;
  ids.reserve(picked.size());
  for (std::size_t i : picked) ids.push_back(manifest.frames[i].frame_id);
  return ids;
}

// ---- CLT diagnostic ----------------------------------------------------------

StatSummary clt_diagnostic(std::span<const double> values, std::int64_t sample_size,
                           std::int64_t trials, std::uint64_t seed) {
  if (values.empty()) throw ValidationError("clt_diagnostic: empty population");
  if (sample_size < 1 || static_cast<std::size_t>(sample_size) > values.size())
    throw ValidationError("clt_diagnostic: sample size outside [1, population]");
  if (trials < 1) throw ValidationError("clt_diagnostic: trials must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("clt_diagnostic: non-finite value");

  const double count = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / count;
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  const double sigma = std::sqrt(ss / count);

  StatSummary out;
  out.population_mean = mu;
  out.population_sigma = sigma;
  out.sample_size = sample_size;
  out.trials = trials;
  const double n = static_cast<double>(sample_size);
  out.band_half_width = normal_quantile(0.975) * sigma / std::sqrt(n);
  const double tolerance = 1e-12 * std::max(1.0, std::abs(mu));

  std::vector<std::size_t> pool(values.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(mix_seed(seed));
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(trials));
  std::int64_t inside = 0;
  double z_sum = 0.0;
  double z_sq = 0.0;
  for (std::int64_t t = 0; t < trials; ++t) {
    partial_shuffle(pool, static_cast<std::size_t>(sample_size), rng);
    double s = 0.0;
    for (std::int64_t k = 0; k < sample_size; ++k) s += values[pool[static_cast<std::size_t>(k)]];
    const double mean = s / n;
    means.push_back(mean);
    if (std::abs(mean - mu) <= out.band_half_width + tolerance) ++inside;
    if (sigma > 0.0) {
      const double z = (s - n * mu) / (sigma * std::sqrt(n));
      z_sum += z;
      z_sq += z * z;
    }
  }
  const double tcount = static_cast<double>(trials);
  out.sample_mean_mean = std::accumulate(means.begin(), means.end(), 0.0) / tcount;
  double var = 0.0;
  for (double m : means) var += (m - out.sample_mean_mean) * (m - out.sample_mean_mean);
  out.sample_mean_sigma = std::sqrt(var / tcount);
  out.within_band_fraction = static_cast<double>(inside) / tcount;
  if (sigma > 0.0) {
    out.standardized_mean = z_sum / tcount;
    out.standardized_sigma = std::sqrt(std::max(0.0, z_sq / tcount - (z_sum / tcount) * (z_sum / tcount)));
  }
  return out;
}

// ---- confidence filter -----------------------------------------------------

FilterResult filter_by_confidence(std::span<const Annotation> annotations, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ValidationError("confidence threshold must lie in [0, 1]");
  FilterResult out;
  for (const auto& a : annotations) {
    const bool keep = a.provenance == Provenance::manual ||
                      (a.box.confidence && *a.box.confidence >= threshold);
    (keep ? out.kept : out.dropped).push_back(a);
  }
  return out;
}

// ---- review sessions ---------------------------------------------------------

const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::pending: return "pending";
    case Verdict::accepted: return "accepted";
    case Verdict::rejected: return "rejected";
  }
  return "unknown";
}

Verdict verdict_from_string(std::string_view text) {
  if (text == "pending") return Verdict::pending;
  if (text == "accepted") return Verdict::accepted;
  if (text == "rejected") return Verdict::rejected;
  throw ValidationError("unknown verdict '" + std::string(text) + "'");
}

bool ReviewSession::complete() const {
  return std::none_of(verdicts.begin(), verdicts.end(),
                      [](const auto& kv) { return kv.second == Verdict::pending; });
}

std::vector<std::string> ReviewSession::pending_frame_ids() const {
  std::vector<std::string> out;
  for (const auto& id : sampled_frame_ids)
    if (verdicts.at(id) == Verdict::pending) out.push_back(id);
  return out;
}

namespace {

void validate_session_id(const std::string& id) {
  if (id.empty() || id.size() > 128)
    throw ValidationError("session id must be 1-128 characters");
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
      throw ValidationError("session id may only contain letters, digits, '-', '_' and '.'");
  if (id.front() == '.') throw ValidationError("session id may not start with '.'");
}

}  // namespace

ReviewSession create_review_session(const DatasetManifest& manifest, const SamplingPlan& plan,
                                    std::uint64_t seed, double confidence_threshold,
                                    std::string session_id) {
  validate_session_id(session_id);
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
    throw ValidationError("confidence threshold must lie in [0, 1]");
  ReviewSession s;
  s.session_id = std::move(session_id);
  s.plan = plan;
  s.seed = seed;
  s.confidence_threshold = confidence_threshold;
  s.sampled_frame_ids = sample_frames(manifest, plan, seed);
  for (const auto& id : s.sampled_frame_ids) s.verdicts[id] = Verdict::pending;
  s.created_at = utc_timestamp();
  return s;
}

void record_verdict(ReviewSession& session, const std::string& frame_id, Verdict verdict) {
  if (session.finalized)
    throw ConflictError("session " + session.session_id + " is finalized");
  const auto it = session.verdicts.find(frame_id);
  if (it == session.verdicts.end())
    throw NotFoundError("frame " + frame_id + " is not part of session " + session.session_id);
  if (verdict == Verdict::pending) throw ValidationError("a verdict must be accepted or rejected");
  it->second = verdict;
  ++session.revision;
}

ApplyResult apply_verdicts(const DatasetManifest& manifest, const ReviewSession& session) {
  if (!session.complete()) {
    const auto pending = session.pending_frame_ids();
    throw ConflictError("session " + session.session_id + " has " +
                        std::to_string(pending.size()) + " pending verdicts");
  }
  for (const auto& id : session.sampled_frame_ids)
    if (!manifest.find(id))
      throw ValidationError("session frame " + id + " is not in the manifest");

  ApplyResult out;
  out.manifest = manifest;
  out.manifest.label_threshold = session.confidence_threshold;
  const double t = session.confidence_threshold;
  const std::string tag = "review " + session.session_id + ": ";

  for (auto& frame : out.manifest.frames) {
    const auto it = session.verdicts.find(frame.frame_id);
    if (it == session.verdicts.end()) continue;
    const bool frame_ok = it->second == Verdict::accepted;
    (frame_ok ? out.accepted_frames : out.rejected_frames) += 1;
    for (auto& a : frame.annotations) {
      if (a.provenance == Provenance::manual) continue;
      Provenance next = Provenance::reviewed_rejected;
      std::string note = tag + "frame rejected";
      if (frame_ok) {
        if (a.box.confidence && *a.box.confidence >= t) {
          next = Provenance::reviewed_accepted;
          note = tag + "frame accepted";
        } else {
          note = tag + "confidence below threshold " + std::to_string(t);
        }
      }
      try {
        a = transition(a, next, note);
      } catch (const ValidationError& e) {
        throw ConflictError("frame " + frame.frame_id + ": " + e.what());
      }
      (next == Provenance::reviewed_accepted ? out.boxes_accepted : out.boxes_rejected) += 1;
    }
  }
  const auto decided = out.accepted_frames + out.rejected_frames;
  if (decided > 0)
    out.acceptance_rate = static_cast<double>(out.accepted_frames) / static_cast<double>(decided);
  return out;
}

json to_json(const ReviewSession& s) {
  json plan = {{"population_size", s.plan.population_size},
               {"sample_size", s.plan.sample_size},
               {"confidence_level", s.plan.confidence_level},
               {"margin_of_error", s.plan.margin_of_error},
               {"population_sigma", s.plan.population_sigma ? json(*s.plan.population_sigma)
                                                             : json(nullptr)},
               {"strategy", to_string(s.plan.strategy)},
               {"strict", s.plan.strict}};
  json frames = json::array();
  for (const auto& id : s.sampled_frame_ids)
    frames.push_back({{"frame_id", id}, {"verdict", to_string(s.verdicts.at(id))}});
  return {{"format", "aldot-review/1"},
          {"session_id", s.session_id},
          {"seed", s.seed},
          {"confidence_threshold", s.confidence_threshold},
          {"revision", s.revision},
          {"finalized", s.finalized},
          {"created_at", s.created_at},
          {"plan", plan},
          {"frames", frames}};
}

ReviewSession review_session_from_json(const json& doc) {
  try {
    if (doc.value("format", "") != "aldot-review/1")
      throw ValidationError("review session: unsupported or missing format tag");
    ReviewSession s;
    s.session_id = doc.at("session_id").get<std::string>();
    validate_session_id(s.session_id);
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.confidence_threshold = doc.at("confidence_threshold").get<double>();
    s.revision = doc.value("revision", std::uint64_t{0});
    s.finalized = doc.value("finalized", false);
    s.created_at = doc.value("created_at", "");
    const json& p = doc.at("plan");
    s.plan.population_size = p.at("population_size").get<std::int64_t>();
    s.plan.sample_size = p.at("sample_size").get<std::int64_t>();
    s.plan.confidence_level = p.at("confidence_level").get<double>();
    s.plan.margin_of_error = p.at("margin_of_error").get<double>();
    if (p.contains("population_sigma") && !p["population_sigma"].is_null())
      s.plan.population_sigma = p["population_sigma"].get<double>();
    s.plan.strategy = sampling_strategy_from_string(p.at("strategy").get<std::string>());
    s.plan.strict = p.value("strict", false);
    validate(s.plan);
    for (const json& f : doc.at("frames")) {
      const auto id = f.at("frame_id").get<std::string>();
      if (!s.verdicts.emplace(id, verdict_from_string(f.at("verdict").get<std::string>())).second)
        throw ValidationError("review session: duplicate frame " + id);
      s.sampled_frame_ids.push_back(id);
    }
    if (!(s.confidence_threshold >= 0.0 && s.confidence_threshold <= 1.0))
      throw ValidationError("review session: threshold outside [0, 1]");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("review session: ") + e.what());
  }
}

fs::path review_session_path(const fs::path& root, const std::string& session_id) {
  validate_session_id(session_id);
  return root / "reviews" / (session_id + ".json");
}

ReviewSession load_review_session(const fs::path& root, const std::string& session_id) {
  const fs::path path = review_session_path(root, session_id);
  std::error_code ec;
  if (!fs::exists(path, ec)) throw NotFoundError("no review session " + session_id);
  try {
    return review_session_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_review_session(const fs::path& root, const ReviewSession& session) {
  write_file_atomic(review_session_path(root, session.session_id), to_json(session).dump(2) + "\n");
}

}  // namespace aldot
