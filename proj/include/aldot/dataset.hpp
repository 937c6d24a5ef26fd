#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldot/geometry.hpp"

namespace aldot {

enum class Provenance { manual, automatic, reviewed_accepted, reviewed_rejected };

const char* to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view text);

/// One prior state of an annotation, kept when its provenance changes.
struct ProvenanceEvent {
  Provenance provenance = Provenance::manual;
  std::string note;

  bool operator==(const ProvenanceEvent&) const = default;
};

struct Annotation {
  BoundingBox box;
  Provenance provenance = Provenance::manual;
  std::optional<std::string> source_model;
  /// Earlier states, oldest first. Never shrinks.
  std::vector<ProvenanceEvent> history;

  bool operator==(const Annotation&) const = default;
};

/// Returns a copy of `a` moved to `next`, with the old state appended to the
/// history. Allowed: manual->manual, automatic->reviewed_{accepted,rejected},
/// and reviewed_X->reviewed_X (a no-op, so re-applying a review is stable).
Annotation transition(const Annotation& a, Provenance next, std::string note = {});

/// Whether a frame's image header could be read.
enum class FrameStatus { ok, missing, unreadable };

const char* to_string(FrameStatus s) noexcept;

struct FrameRecord {
  std::string frame_id;
  std::string image_path;  // relative to the dataset root
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
  bool scenario_shift = false;
  FrameStatus status = FrameStatus::ok;

  bool operator==(const FrameRecord&) const = default;
};

struct DatasetManifest {
  std::vector<FrameRecord> frames;
  std::vector<std::string> class_names{"roomba"};
  std::string source_note;
  std::string created_at;
  /// Command, seed and options that produced this snapshot.
  nlohmann::json generated_by = nlohmann::json::object();
  /// Automatic boxes below this confidence are left out of labels/.
  double label_threshold = 0.0;

  const FrameRecord* find(std::string_view frame_id) const;
  int class_count() const noexcept { return static_cast<int>(class_names.size()); }

  bool operator==(const DatasetManifest&) const = default;
};

/// Checks unique ids, positive dimensions on ok frames, and box invariants.
void validate(const DatasetManifest& manifest);

// ---- darknet label files -------------------------------------------------

/// Parses "class cx cy w h [confidence]" lines. Blank lines are skipped.
std::vector<BoundingBox> parse_darknet_labels(std::string_view text, int class_count);

/// Six decimals per number, newline after every line; confidence only when set.
std::string serialize_darknet_labels(const std::vector<BoundingBox>& boxes);

/// Reads labels/<stem>.txt style files; a missing file means "no objects".
std::vector<BoundingBox> read_label_file(const std::filesystem::path& path, int class_count);

// ---- COCO interchange ----------------------------------------------------

/// Standard COCO detection layout. Category ids are class_id + 1. Extra
/// per-annotation keys ("score", "aldot_provenance", "aldot_source_model")
/// and per-image keys ("aldot_frame_id", "aldot_scenario_shift") carry the
/// fields COCO has no slot for.
nlohmann::json export_coco(const DatasetManifest& manifest);

DatasetManifest import_coco(const nlohmann::json& doc);

// ---- manifest JSON -------------------------------------------------------

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);

// ---- on-disk layout ------------------------------------------------------

/// Annotations written to labels/<id>.txt: everything not rejected, with
/// automatic boxes below `auto_threshold` left out.
std::vector<BoundingBox> effective_labels(const FrameRecord& frame, double auto_threshold = 0.0);

/// Scans `directory` for files matching `pattern` (fnmatch glob) in
/// lexicographic order, reading dimensions from PNG/JPEG headers. Image paths
/// are recorded as "frames/<filename>".
DatasetManifest ingest_frames(const std::filesystem::path& directory, const std::string& pattern);

/// Exclusive advisory lock on a dataset directory, held for its lifetime.
/// Excludes other processes (flock) and other threads; a thread may nest
/// locks on the same directory.
class DatasetLock {
 public:
  explicit DatasetLock(const std::filesystem::path& root);
  ~DatasetLock();
  DatasetLock(const DatasetLock&) = delete;
  DatasetLock& operator=(const DatasetLock&) = delete;

  struct State;

 private:
  State* state_ = nullptr;
};

/// Loads manifest.json; frames whose image is absent are flagged missing.
DatasetManifest load_dataset(const std::filesystem::path& root);

/// Writes manifest.json and regenerates labels/ at the manifest's
/// label_threshold. Writes are atomic per file.
void save_dataset(const std::filesystem::path& root, const DatasetManifest& manifest);

/// Writes `content` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// UTC timestamp, ISO-8601 with seconds.
std::string utc_timestamp();

}  // namespace aldot
