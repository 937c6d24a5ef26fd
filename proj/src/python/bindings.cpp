#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aldot/assurance.hpp"
#include "aldot/dataset.hpp"
#include "aldot/detection.hpp"
#include "aldot/geometry.hpp"
#include "aldot/metrics.hpp"
#include "aldot/simulator.hpp"

namespace py = pybind11;
using namespace aldot;
using nlohmann::json;

namespace {

// JSON documents cross the boundary as plain dicts.
py::object to_python(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

json from_python(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_aldot, m) {
  m.doc() = "Dataset assurance, detection evaluation and tracking simulation";

  static py::exception<Error> error(m, "Error");
  static py::exception<ValidationError> validation(m, "ValidationError", error.ptr());
  static py::exception<NotFoundError> not_found(m, "NotFoundError", error.ptr());
  static py::exception<ConflictError> conflict(m, "ConflictError", error.ptr());
  static py::exception<IoError> io(m, "IoError", error.ptr());
  static py::exception<DetectorError> detector(m, "DetectorError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      validation(e.what());
    } catch (const NotFoundError& e) {
      not_found(e.what());
    } catch (const ConflictError& e) {
      conflict(e.what());
    } catch (const IoError& e) {
      io(e.what());
    } catch (const DetectorError& e) {
      detector(e.what());
    } catch (const Error& e) {
      error(e.what());
    }
  });

  // ---- geometry
  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init([](int class_id, double cx, double cy, double w, double h, std::optional<double> conf) {
             return BoundingBox{class_id, cx, cy, w, h, conf};
           }),
           py::arg("class_id"), py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"),
           py::arg("confidence") = py::none())
      .def_readwrite("class_id", &BoundingBox::class_id)
      .def_readwrite("cx", &BoundingBox::cx)
      .def_readwrite("cy", &BoundingBox::cy)
      .def_readwrite("w", &BoundingBox::w)
      .def_readwrite("h", &BoundingBox::h)
      .def_readwrite("confidence", &BoundingBox::confidence)
      .def(py::self == py::self)
      .def("__repr__", [](const BoundingBox& b) {
        return "BoundingBox(class_id=" + std::to_string(b.class_id) + ", cx=" + std::to_string(b.cx) +
               ", cy=" + std::to_string(b.cy) + ", w=" + std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")";
      });

  py::class_<PixelBox>(m, "PixelBox")
      .def(py::init([](double x0, double y0, double x1, double y1, int fw, int fh) {
             return PixelBox{x0, y0, x1, y1, fw, fh};
           }),
           py::arg("x_min"), py::arg("y_min"), py::arg("x_max"), py::arg("y_max"), py::arg("frame_width"),
           py::arg("frame_height"))
      .def_readwrite("x_min", &PixelBox::x_min)
      .def_readwrite("y_min", &PixelBox::y_min)
      .def_readwrite("x_max", &PixelBox::x_max)
      .def_readwrite("y_max", &PixelBox::y_max)
      .def_readwrite("frame_width", &PixelBox::frame_width)
      .def_readwrite("frame_height", &PixelBox::frame_height);

  m.def("to_pixel", &to_pixel, py::arg("box"), py::arg("width"), py::arg("height"));
  m.def("to_normalized", &to_normalized, py::arg("pbox"));
  m.def("iou", py::overload_cast<const BoundingBox&, const BoundingBox&>(&iou));
  m.def("iou", py::overload_cast<const PixelBox&, const PixelBox&>(&iou));

  // ---- formats and datasets
  m.def("parse_darknet_labels", [](const std::string& text, int class_count) {
    return parse_darknet_labels(text, class_count);
  }, py::arg("text"), py::arg("class_count"));
  m.def("serialize_darknet_labels", &serialize_darknet_labels, py::arg("boxes"));
  m.def("ingest_frames", [](const std::filesystem::path& dir, const std::string& pattern) {
    return to_python(to_json(ingest_frames(dir, pattern)));
  }, py::arg("directory"), py::arg("pattern") = "*.png");
  m.def("load_dataset", [](const std::filesystem::path& root) { return to_python(to_json(load_dataset(root))); },
        py::arg("root"));
  m.def("export_coco", [](const py::object& manifest) {
    return to_python(export_coco(manifest_from_json(from_python(manifest))));
  }, py::arg("manifest"));
  m.def("import_coco", [](const py::object& doc) { return to_python(to_json(import_coco(from_python(doc)))); },
        py::arg("doc"));

  // ---- assurance
  m.def("normal_quantile", &normal_quantile, py::arg("p"));
  m.def("required_sample_size", &required_sample_size, py::arg("sigma"), py::arg("margin"),
        py::arg("confidence_level"));
  m.def("clt_diagnostic", [](const std::vector<double>& values, std::int64_t n, std::int64_t trials,
                             std::uint64_t seed) {
    const StatSummary s = clt_diagnostic(values, n, trials, seed);
    py::dict d;
    d["population_mean"] = s.population_mean;
    d["population_sigma"] = s.population_sigma;
    d["sample_mean_mean"] = s.sample_mean_mean;
    d["sample_mean_sigma"] = s.sample_mean_sigma;
    d["band_half_width"] = s.band_half_width;
    d["within_band_fraction"] = s.within_band_fraction;
    d["standardized_mean"] = s.standardized_mean;
    d["standardized_sigma"] = s.standardized_sigma;
    return d;
  }, py::arg("values"), py::arg("sample_size"), py::arg("trials"), py::arg("seed") = 0);
  m.def("filter_by_confidence", [](const std::vector<BoundingBox>& boxes, double threshold) {
    // Boxes without a confidence are treated as manual.
    std::vector<Annotation> anns;
    for (const auto& b : boxes) {
      Annotation a;
      a.box = b;
      if (b.confidence) a.provenance = Provenance::automatic;
      anns.push_back(a);
    }
    const FilterResult r = filter_by_confidence(anns, threshold);
    std::vector<BoundingBox> kept;
    std::vector<BoundingBox> dropped;
    for (const auto& a : r.kept) kept.push_back(a.box);
    for (const auto& a : r.dropped) dropped.push_back(a.box);
    return py::make_tuple(kept, dropped);
  }, py::arg("boxes"), py::arg("threshold") = kDefaultConfidenceThreshold);
  m.def("sample_frames", [](const std::filesystem::path& root, std::optional<std::int64_t> n, std::uint64_t seed,
                            const std::string& strategy) {
    const DatasetManifest manifest = load_dataset(root);
    SamplingPlan plan = make_sampling_plan(static_cast<std::int64_t>(manifest.frames.size()), std::nullopt, 0.05,
                                           0.95, sampling_strategy_from_string(strategy));
    if (n) plan.sample_size = *n;
    return sample_frames(manifest, plan, seed);
  }, py::arg("root"), py::arg("n") = py::none(), py::arg("seed") = 0, py::arg("strategy") = "uniform");

  // ---- detection and metrics
  py::class_<Detection>(m, "Detection")
      .def(py::init([](BoundingBox box, std::string frame_id, double latency) {
             return Detection{box, std::move(frame_id), latency};
           }),
           py::arg("box"), py::arg("frame_id") = "", py::arg("latency") = 0.0)
      .def_readwrite("box", &Detection::box)
      .def_readwrite("frame_id", &Detection::frame_id)
      .def_readwrite("latency", &Detection::latency)
      .def(py::self == py::self);

  m.def("nms", [](const std::vector<Detection>& dets, double iou_threshold, bool same_class_only) {
    return nms(dets, iou_threshold, same_class_only);
  }, py::arg("detections"), py::arg("iou_threshold") = 0.5, py::arg("same_class_only") = true);

  m.def("oracle_detect", [](const std::vector<BoundingBox>& truth, const std::string& frame_id,
                            std::uint64_t sequence, const py::dict& noise) {
    OracleNoiseModel model;
    model.center_jitter_sigma = noise.contains("center_jitter_sigma") ? noise["center_jitter_sigma"].cast<double>() : 0.0;
    model.size_jitter_sigma = noise.contains("size_jitter_sigma") ? noise["size_jitter_sigma"].cast<double>() : 0.0;
    model.miss_rate = noise.contains("miss_rate") ? noise["miss_rate"].cast<double>() : 0.0;
    model.false_positive_rate = noise.contains("false_positive_rate") ? noise["false_positive_rate"].cast<double>() : 0.0;
    model.confidence_mean = noise.contains("confidence_mean") ? noise["confidence_mean"].cast<double>() : 0.97;
    model.confidence_sigma = noise.contains("confidence_sigma") ? noise["confidence_sigma"].cast<double>() : 0.0;
    model.seed = noise.contains("seed") ? noise["seed"].cast<std::uint64_t>() : 0;
    OracleDetector oracle(model);
    return oracle.detect(FrameRequest{frame_id, 0, 0, "", sequence}, truth);
  }, py::arg("truth"), py::arg("frame_id"), py::arg("sequence") = 0, py::arg("noise") = py::dict());

  m.def("evaluate", [](const std::vector<std::pair<std::vector<Detection>, std::vector<BoundingBox>>>& frames,
                       double iou_threshold, double confidence_threshold, int class_count) {
    std::vector<FrameEvaluation> evals;
    for (std::size_t i = 0; i < frames.size(); ++i)
      evals.push_back({"frame-" + std::to_string(i), frames[i].first, frames[i].second});
    return to_python(to_json(evaluate(evals, iou_threshold, confidence_threshold, class_count)));
  }, py::arg("frames"), py::arg("iou_threshold") = 0.5, py::arg("confidence_threshold") = 0.5,
     py::arg("class_count") = 1);

  m.def("fps_meter", [](const std::vector<double>& ts, std::size_t window) {
    return to_python(to_json(fps_meter(ts, window)));
  }, py::arg("timestamps"), py::arg("window") = 30);

  // ---- simulator
  m.def("plan_altitude", [](double diameter, double min_pixels, double hfov_deg, int image_width) {
    sim::CameraModel cam;
    cam.horizontal_fov = hfov_deg * 3.14159265358979323846 / 180.0;
    cam.image_width = image_width;
    return sim::plan_altitude(cam, diameter, min_pixels);
  }, py::arg("target_diameter"), py::arg("min_pixels"), py::arg("hfov_deg") = 60.0, py::arg("image_width") = 1280);

  m.def("default_episode_config", [] { return to_python(sim::to_json(sim::EpisodeConfig{})); });
  m.def("run_episode", [](const py::object& config, bool with_csv) {
    const sim::EpisodeConfig cfg = sim::episode_config_from_json(config.is_none() ? json::object() : from_python(config));
    sim::EpisodeLog log;
    {
      py::gil_scoped_release release;
      log = sim::run_episode(cfg);
    }
    py::dict out = to_python(sim::episode_summary_json(log, cfg));
    if (with_csv) out["csv"] = sim::episode_csv(log);
    return out;
  }, py::arg("config") = py::none(), py::arg("with_csv") = false);
}
