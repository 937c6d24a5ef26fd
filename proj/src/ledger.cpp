#include <openssl/evp.h>

#include <cmath>
#include <set>

#include "aldot/dataset.hpp"
#include "aldot/metrics.hpp"

using nlohmann::json;

namespace aldot {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::io, "SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

ReferenceMetrics parse_reference_metrics(const json& doc) {
  if (!doc.is_object()) throw ValidationError("reference metrics: document must be an object");
  static const std::set<std::string> allowed{"model", "source", "metrics", "notes"};
  for (const auto& [key, value] : doc.items())
    if (!allowed.count(key)) throw ValidationError("reference metrics: unknown field \"" + key + "\"");

  ReferenceMetrics r;
  const auto text = [&](const char* key, bool required) -> std::string {
    if (!doc.contains(key)) {
      if (required) throw ValidationError(std::string("reference metrics: missing \"") + key + "\"");
      return {};
    }
    if (!doc[key].is_string() || (required && doc[key].get<std::string>().empty()))
      throw ValidationError(std::string("reference metrics: \"") + key + "\" must be a non-empty string");
    return doc[key].get<std::string>();
  };
  r.model = text("model", true);
  r.source = text("source", true);
  r.notes = text("notes", false);

  if (!doc.contains("metrics") || !doc["metrics"].is_object() || doc["metrics"].empty())
    throw ValidationError("reference metrics: \"metrics\" must be a non-empty object");
  for (const auto& [name, value] : doc["metrics"].items()) {
    if (!value.is_number() || !std::isfinite(value.get<double>()))
      throw ValidationError("reference metrics: metrics." + name + " must be a finite number");
    const double v = value.get<double>();
    if ((name == "accuracy" || name == "iou") && !(v >= 0.0 && v <= 1.0))
      throw ValidationError("reference metrics: metrics." + name + " must be a fraction in [0, 1]");
    if (name == "avg_loss" && v < 0.0)
      throw ValidationError("reference metrics: metrics.avg_loss must be non-negative");
    r.metrics[name] = v;
  }
  return r;
}

MetricsLedger::AddResult MetricsLedger::record(const json& document) {
  ReferenceMetrics parsed = parse_reference_metrics(document);
  // nlohmann objects keep keys sorted, so dump() is canonical.
  const std::string hash = sha256_hex(document.dump());
  for (const auto& e : entries_)
    if (e.content_hash == hash) return {e, false};
  entries_.push_back({document, std::move(parsed), hash, utc_timestamp()});
  return {entries_.back(), true};
}

json MetricsLedger::to_json() const {
  json list = json::array();
  for (const auto& e : entries_)
    list.push_back({{"document", e.document},
                    {"content_hash", e.content_hash},
                    {"recorded_at", e.recorded_at}});
  return {{"format", "aldot-ledger/1"}, {"entries", list}};
}

MetricsLedger MetricsLedger::from_json(const json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "aldot-ledger/1")
    throw ValidationError("ledger: unsupported or missing format tag");
  MetricsLedger ledger;
  for (const json& e : doc.at("entries")) {
    const json& d = e.at("document");
    LedgerEntry entry{d, parse_reference_metrics(d), sha256_hex(d.dump()),
                      e.value("recorded_at", "")};
    if (e.contains("content_hash") && e["content_hash"] != entry.content_hash)
      throw ValidationError("ledger: content hash mismatch for model " + entry.metrics.model);
    ledger.entries_.push_back(std::move(entry));
  }
  return ledger;
}

}  // namespace aldot
