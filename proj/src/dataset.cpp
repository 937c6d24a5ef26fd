#include "aldot/dataset.hpp"

#include <fcntl.h>
#include <fnmatch.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include "aldot/error.hpp"
#include "aldot/image_header.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aldot {

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::manual: return "manual";
    case Provenance::automatic: return "auto";
    case Provenance::reviewed_accepted: return "reviewed-accepted";
    case Provenance::reviewed_rejected: return "reviewed-rejected";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view text) {
  if (text == "manual") return Provenance::manual;
  if (text == "auto") return Provenance::automatic;
  if (text == "reviewed-accepted") return Provenance::reviewed_accepted;
  if (text == "reviewed-rejected") return Provenance::reviewed_rejected;
  throw ValidationError("unknown provenance '" + std::string(text) + "'");
}

const char* to_string(FrameStatus s) noexcept {
  switch (s) {
    case FrameStatus::ok: return "ok";
    case FrameStatus::missing: return "missing";
    case FrameStatus::unreadable: return "unreadable";
  }
  return "unknown";
}

namespace {

FrameStatus frame_status_from_string(std::string_view text) {
  if (text == "ok") return FrameStatus::ok;
  if (text == "missing") return FrameStatus::missing;
  if (text == "unreadable") return FrameStatus::unreadable;
  throw ValidationError("unknown frame status '" + std::string(text) + "'");
}

}  // namespace

Annotation transition(const Annotation& a, Provenance next, std::string note) {
  const Provenance cur = a.provenance;
  const bool reviewed = cur == Provenance::reviewed_accepted || cur == Provenance::reviewed_rejected;
  if (cur == next && (cur == Provenance::manual || reviewed)) return a;
  const bool allowed = cur == Provenance::automatic && (next == Provenance::reviewed_accepted ||
                                                        next == Provenance::reviewed_rejected);
  if (!allowed)
    throw ValidationError(std::string("illegal provenance transition ") + to_string(cur) + " -> " +
                          to_string(next));
  Annotation out = a;
  out.history.push_back({cur, std::move(note)});
  out.provenance = next;
  return out;
}

const FrameRecord* DatasetManifest::find(std::string_view frame_id) const {
  for (const auto& f : frames)
    if (f.frame_id == frame_id) return &f;
  return nullptr;
}

void validate(const DatasetManifest& m) {
  if (m.class_names.empty()) throw ValidationError("manifest has no class names");
  if (!(m.label_threshold >= 0.0 && m.label_threshold <= 1.0))
    throw ValidationError("label threshold must lie in [0, 1]");
  std::set<std::string_view> ids;
  for (const auto& f : m.frames) {
    if (f.frame_id.empty()) throw ValidationError("frame with empty id");
    if (!ids.insert(f.frame_id).second) throw ValidationError("duplicate frame id " + f.frame_id);
    if (f.status == FrameStatus::ok && (f.width <= 0 || f.height <= 0))
      throw ValidationError("frame " + f.frame_id + " has non-positive dimensions");
    for (const auto& a : f.annotations) {
      validate(a.box);
      if (a.box.class_id >= m.class_count())
        throw ValidationError("frame " + f.frame_id + ": class id " +
                              std::to_string(a.box.class_id) + " out of range");
    }
  }
}

// ---- darknet ---------------------------------------------------------------

namespace {

constexpr const char* kFieldNames[] = {"class", "cx", "cy", "w", "h", "confidence"};

[[noreturn]] void label_error(std::size_t line, std::size_t field, const std::string& msg) {
  throw ValidationError("line " + std::to_string(line) + ", field " + std::to_string(field + 1) +
                        " (" + kFieldNames[field] + "): " + msg);
}

double parse_real(std::string_view tok, std::size_t line, std::size_t field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
    label_error(line, field, "not a number: '" + std::string(tok) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

std::vector<BoundingBox> parse_darknet_labels(std::string_view text, int class_count) {
  std::vector<BoundingBox> boxes;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != 5 && fields.size() != 6)
      throw ValidationError("line " + std::to_string(line_no) + ": expected 5 or 6 fields, got " +
                            std::to_string(fields.size()));
    BoundingBox b;
    {
      int cls = 0;
      const auto tok = fields[0];
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), cls);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        label_error(line_no, 0, "not an integer: '" + std::string(tok) + "'");
      if (cls < 0 || cls >= class_count)
        label_error(line_no, 0, "class id " + std::to_string(cls) + " outside [0, " +
                                    std::to_string(class_count) + ")");
      b.class_id = cls;
    }
    b.cx = parse_real(fields[1], line_no, 1);
    b.cy = parse_real(fields[2], line_no, 2);
    b.w = parse_real(fields[3], line_no, 3);
    b.h = parse_real(fields[4], line_no, 4);
    for (std::size_t f : {1u, 2u}) {
      const double v = f == 1 ? b.cx : b.cy;
      if (v < 0.0 || v > 1.0) label_error(line_no, f, "outside [0, 1]");
    }
    for (std::size_t f : {3u, 4u}) {
      const double v = f == 3 ? b.w : b.h;
      if (v <= 0.0 || v > 1.0) label_error(line_no, f, "outside (0, 1]");
    }
    if (fields.size() == 6) {
      const double c = parse_real(fields[5], line_no, 5);
      if (c < 0.0 || c > 1.0) label_error(line_no, 5, "outside [0, 1]");
      b.confidence = c;
    }
    boxes.push_back(b);
  }
  return boxes;
}

std::string serialize_darknet_labels(const std::vector<BoundingBox>& boxes) {
  std::string out;
  char buf[160];
  for (const auto& b : boxes) {
    validate(b);
    int n = std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f", b.class_id, b.cx, b.cy, b.w,
                          b.h);
    out.append(buf, static_cast<std::size_t>(n));
    if (b.confidence) {
      n = std::snprintf(buf, sizeof buf, " %.6f", *b.confidence);
      out.append(buf, static_cast<std::size_t>(n));
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<BoundingBox> read_label_file(const fs::path& path, int class_count) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return {};
  try {
    return parse_darknet_labels(read_file(path), class_count);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---- COCO ------------------------------------------------------------------

json export_coco(const DatasetManifest& m) {
  validate(m);
  json doc;
  doc["info"] = {{"description", m.source_note},
                 {"date_created", m.created_at},
                 {"aldot_generated_by", m.generated_by}};
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array();
  for (int c = 0; c < m.class_count(); ++c)
    doc["categories"].push_back(
        {{"id", c + 1}, {"name", m.class_names[static_cast<std::size_t>(c)]}, {"supercategory", ""}});

  long long next_ann = 1;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const auto& f = m.frames[i];
    if (f.status != FrameStatus::ok || f.width <= 0 || f.height <= 0)
      throw ValidationError("export_coco: frame " + f.frame_id + " has unknown dimensions");
    const long long image_id = static_cast<long long>(i) + 1;
    doc["images"].push_back({{"id", image_id},
                             {"file_name", f.image_path},
                             {"width", f.width},
                             {"height", f.height},
                             {"aldot_frame_id", f.frame_id},
                             {"aldot_scenario_shift", f.scenario_shift}});
    for (const auto& a : f.annotations) {
      const PixelBox p = to_pixel(a.box, f.width, f.height);
      json ann = {{"id", next_ann++},
                  {"image_id", image_id},
                  {"category_id", a.box.class_id + 1},
                  {"bbox", {p.x_min, p.y_min, p.width(), p.height()}},
                  {"area", p.area()},
                  {"iscrowd", 0},
                  {"aldot_provenance", to_string(a.provenance)}};
      if (a.box.confidence) ann["score"] = *a.box.confidence;
      if (a.source_model) ann["aldot_source_model"] = *a.source_model;
      doc["annotations"].push_back(std::move(ann));
    }
  }
  return doc;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ValidationError(where + ": missing \"" + key + "\"");
  return obj.at(key);
}

long long require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) throw ValidationError(where + ": \"" + key + "\" must be an integer");
  return v.get<long long>();
}

}  // namespace

DatasetManifest import_coco(const json& doc) {
  if (!doc.is_object()) throw ValidationError("COCO document must be an object");
  const json& images = require(doc, "images", "COCO document");
  const json& annotations = require(doc, "annotations", "COCO document");
  const json& categories = require(doc, "categories", "COCO document");
  if (!images.is_array() || !annotations.is_array() || !categories.is_array())
    throw ValidationError("COCO images/annotations/categories must be arrays");

  DatasetManifest m;
  if (doc.contains("info") && doc["info"].is_object()) {
    const json& info = doc["info"];
    m.source_note = info.value("description", "");
    m.created_at = info.value("date_created", "");
    if (info.contains("aldot_generated_by")) m.generated_by = info["aldot_generated_by"];
  }

  // Category ids map to class ids by ascending id.
  std::vector<std::pair<long long, std::string>> cats;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    cats.emplace_back(require_int(categories[i], "id", where),
                      require(categories[i], "name", where).get<std::string>());
  }
  std::sort(cats.begin(), cats.end());
  m.class_names.clear();
  std::map<long long, int> class_of;
  for (const auto& [id, name] : cats) {
    if (!class_of.emplace(id, static_cast<int>(m.class_names.size())).second)
      throw ValidationError("duplicate category id " + std::to_string(id));
    m.class_names.push_back(name);
  }

  std::map<long long, std::size_t> frame_of;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& img = images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    const long long id = require_int(img, "id", where);
    if (!img.contains("width") || !img.contains("height"))
      throw ValidationError(where + ": missing image dimensions");
    FrameRecord f;
    f.width = static_cast<int>(require_int(img, "width", where));
    f.height = static_cast<int>(require_int(img, "height", where));
    if (f.width <= 0 || f.height <= 0) throw ValidationError(where + ": non-positive dimensions");
    f.image_path = require(img, "file_name", where).get<std::string>();
    f.frame_id = img.contains("aldot_frame_id") ? img["aldot_frame_id"].get<std::string>()
                                                 : fs::path(f.image_path).stem().string();
    f.scenario_shift = img.value("aldot_scenario_shift", false);
    if (!frame_of.emplace(id, m.frames.size()).second)
      throw ValidationError(where + ": duplicate image id " + std::to_string(id));
    m.frames.push_back(std::move(f));
  }

  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const json& ann = annotations[i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const long long image_id = require_int(ann, "image_id", where);
    const auto fit = frame_of.find(image_id);
    if (fit == frame_of.end())
      throw ValidationError(where + ": dangling image_id " + std::to_string(image_id));
    const long long cat = require_int(ann, "category_id", where);
    const auto cit = class_of.find(cat);
    if (cit == class_of.end())
      throw ValidationError(where + ": unknown category_id " + std::to_string(cat));
    const json& bbox = require(ann, "bbox", where);
    if (!bbox.is_array() || bbox.size() != 4)
      throw ValidationError(where + ": bbox must be [x, y, w, h]");
    FrameRecord& f = m.frames[fit->second];
    PixelBox p;
    p.frame_width = f.width;
    p.frame_height = f.height;
    const double x = bbox[0].get<double>();
    const double y = bbox[1].get<double>();
    p.x_min = std::clamp(x, 0.0, double(f.width));
    p.y_min = std::clamp(y, 0.0, double(f.height));
    p.x_max = std::clamp(x + bbox[2].get<double>(), 0.0, double(f.width));
    p.y_max = std::clamp(y + bbox[3].get<double>(), 0.0, double(f.height));
    Annotation a;
    try {
      a.box = to_normalized(p);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    a.box.class_id = cit->second;
    if (ann.contains("score")) a.box.confidence = ann["score"].get<double>();
    a.provenance = ann.contains("aldot_provenance")
                       ? provenance_from_string(ann["aldot_provenance"].get<std::string>())
                       : (a.box.confidence ? Provenance::automatic : Provenance::manual);
    if (ann.contains("aldot_source_model"))
      a.source_model = ann["aldot_source_model"].get<std::string>();
    validate(a.box);
    f.annotations.push_back(std::move(a));
  }
  validate(m);
  return m;
}

// ---- manifest JSON ---------------------------------------------------------

json to_json(const DatasetManifest& m) {
  json doc;
  doc["format"] = "aldot-manifest/1";
  doc["source_note"] = m.source_note;
  doc["created_at"] = m.created_at;
  doc["class_names"] = m.class_names;
  doc["generated_by"] = m.generated_by;
  doc["label_threshold"] = m.label_threshold;
  doc["frames"] = json::array();
  for (const auto& f : m.frames) {
    json jf = {{"frame_id", f.frame_id},       {"image_path", f.image_path},
               {"width", f.width},             {"height", f.height},
               {"status", to_string(f.status)}, {"scenario_shift", f.scenario_shift}};
    jf["annotations"] = json::array();
    for (const auto& a : f.annotations) {
      json ja = {{"class_id", a.box.class_id}, {"cx", a.box.cx}, {"cy", a.box.cy},
                 {"w", a.box.w},               {"h", a.box.h},   {"provenance", to_string(a.provenance)}};
      ja["confidence"] = a.box.confidence ? json(*a.box.confidence) : json(nullptr);
      ja["source_model"] = a.source_model ? json(*a.source_model) : json(nullptr);
      ja["history"] = json::array();
      for (const auto& ev : a.history)
        ja["history"].push_back({{"provenance", to_string(ev.provenance)}, {"note", ev.note}});
      jf["annotations"].push_back(std::move(ja));
    }
    doc["frames"].push_back(std::move(jf));
  }
  return doc;
}

DatasetManifest manifest_from_json(const json& doc) {
  try {
    if (doc.value("format", "") != "aldot-manifest/1")
      throw ValidationError("manifest: unsupported or missing format tag");
    DatasetManifest m;
    m.source_note = doc.value("source_note", "");
    m.created_at = doc.value("created_at", "");
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.generated_by = doc.value("generated_by", json::object());
    m.label_threshold = doc.value("label_threshold", 0.0);
    for (const json& jf : doc.at("frames")) {
      FrameRecord f;
      f.frame_id = jf.at("frame_id").get<std::string>();
      f.image_path = jf.at("image_path").get<std::string>();
      f.width = jf.at("width").get<int>();
      f.height = jf.at("height").get<int>();
      f.status = frame_status_from_string(jf.value("status", "ok"));
      f.scenario_shift = jf.value("scenario_shift", false);
      for (const json& ja : jf.at("annotations")) {
        Annotation a;
        a.box.class_id = ja.at("class_id").get<int>();
        a.box.cx = ja.at("cx").get<double>();
        a.box.cy = ja.at("cy").get<double>();
        a.box.w = ja.at("w").get<double>();
        a.box.h = ja.at("h").get<double>();
        if (ja.contains("confidence") && !ja["confidence"].is_null())
          a.box.confidence = ja["confidence"].get<double>();
        if (ja.contains("source_model") && !ja["source_model"].is_null())
          a.source_model = ja["source_model"].get<std::string>();
        a.provenance = provenance_from_string(ja.at("provenance").get<std::string>());
        for (const json& ev : ja.value("history", json::array()))
          a.history.push_back({provenance_from_string(ev.at("provenance").get<std::string>()),
                               ev.value("note", "")});
        f.annotations.push_back(std::move(a));
      }
      m.frames.push_back(std::move(f));
    }
    validate(m);
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

// ---- on-disk layout ----------------------------------------------------------

std::vector<BoundingBox> effective_labels(const FrameRecord& frame, double auto_threshold) {
  std::vector<BoundingBox> out;
  for (const auto& a : frame.annotations) {
    switch (a.provenance) {
      case Provenance::manual:
      case Provenance::reviewed_accepted:
        out.push_back(a.box);
        break;
      case Provenance::automatic:
        if (a.box.confidence ? *a.box.confidence >= auto_threshold : auto_threshold <= 0.0)
          out.push_back(a.box);
        break;
      case Provenance::reviewed_rejected:
        break;
    }
  }
  return out;
}

DatasetManifest ingest_frames(const fs::path& directory, const std::string& pattern) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec))
    throw NotFoundError("frame directory not found: " + directory.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (::fnmatch(pattern.c_str(), name.c_str(), 0) == 0) names.push_back(name);
  }
  if (names.empty())
    throw ValidationError("no frames matched '" + pattern + "' in " + directory.string());
  std::sort(names.begin(), names.end());

  DatasetManifest m;
  m.created_at = utc_timestamp();
  m.source_note = "ingested from " + directory.string();
  std::set<std::string> ids;
  for (const auto& name : names) {
    FrameRecord f;
    f.frame_id = fs::path(name).stem().string();
    if (!ids.insert(f.frame_id).second)
      throw ValidationError("two frames share the id '" + f.frame_id + "'");
    f.image_path = "frames/" + name;
    if (const auto size = read_image_size(directory / name)) {
      f.width = size->width;
      f.height = size->height;
    } else {
      f.status = FrameStatus::unreadable;
    }
    m.frames.push_back(std::move(f));
  }
  return m;
}

struct DatasetLock::State {
  std::recursive_mutex thread_lock;
  int fd = -1;
  int depth = 0;
};

namespace {

DatasetLock::State& lock_state(const fs::path& root) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<DatasetLock::State>> registry;
  const std::string key = fs::weakly_canonical(fs::absolute(root)).string();
  std::lock_guard guard(registry_mutex);
  auto& slot = registry[key];
  if (!slot) slot = std::make_unique<DatasetLock::State>();
  return *slot;
}

}  // namespace

DatasetLock::DatasetLock(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  State& st = lock_state(root);
  st.thread_lock.lock();
  if (st.depth == 0) {
    const fs::path lock = root / ".aldot.lock";
    const int fd = ::open(lock.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd < 0) {
      st.thread_lock.unlock();
      throw IoError("cannot open lock file " + lock.string());
    }
    if (::flock(fd, LOCK_EX) != 0) {
      ::close(fd);
      st.thread_lock.unlock();
      throw IoError("cannot lock " + lock.string());
    }
    st.fd = fd;
  }
  ++st.depth;
  state_ = &st;
}

DatasetLock::~DatasetLock() {
  if (--state_->depth == 0) {
    ::flock(state_->fd, LOCK_UN);
    ::close(state_->fd);
    state_->fd = -1;
  }
  state_->thread_lock.unlock();
}

DatasetManifest load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::error_code ec;
  if (!fs::exists(manifest_path, ec)) throw NotFoundError("no manifest.json in " + root.string());
  DatasetLock lock(root);
  json doc;
  try {
    doc = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m = manifest_from_json(doc);
  for (auto& f : m.frames)
    if (f.status == FrameStatus::ok && !fs::exists(root / f.image_path, ec))
      f.status = FrameStatus::missing;
  return m;
}

void save_dataset(const fs::path& root, const DatasetManifest& m) {
  validate(m);
  DatasetLock lock(root);
  std::error_code ec;
  fs::create_directories(root / "labels", ec);
  if (ec) throw IoError("cannot create " + (root / "labels").string() + ": " + ec.message());
  for (const auto& f : m.frames)
    write_file_atomic(root / "labels" / (f.frame_id + ".txt"),
                      serialize_darknet_labels(effective_labels(f, m.label_threshold)));
  const json doc = to_json(m);
  write_file_atomic(root / "manifest.json", doc.dump(2) + "\n");
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot replace " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace aldot
