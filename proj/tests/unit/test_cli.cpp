#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <csignal>
#include <thread>

#include "aldot/assurance.hpp"
#include "aldot/dataset.hpp"
#include "test_support.hpp"

using namespace aldot;
using aldot::testing::CommandResult;
using aldot::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = ALDOT_CLI;

struct Cli {
  TempDir dir;

  CommandResult run(const std::string& args) { return aldot::testing::run_command(kCli + " " + args, dir.path()); }

  json run_json(const std::string& args) {
    const CommandResult r = run(args);
    INFO(args, "\n", r.err);
    REQUIRE(r.exit_code == 0);
    return json::parse(r.out);
  }

  std::string path(const std::string& rel) const { return (dir.path() / rel).string(); }
};

std::string error_kind(const CommandResult& r) {
  const json doc = json::parse(r.err, nullptr, false);
  if (doc.is_discarded() || !doc.contains("error")) return "";
  return doc["error"]["kind"];
}

void write_frames(const fs::path& dir, int count) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i)
    aldot::testing::write_bytes(dir / ("f" + std::to_string(i) + ".png"), aldot::testing::make_png(32, 24));
}

// Frames with manual truth boxes, ready for the oracle.
void make_truth_dataset(const fs::path& root, int count) {
  write_frames(root / "frames", count);
  DatasetManifest m;
  for (int i = 0; i < count; ++i) {
    FrameRecord f;
    f.frame_id = "f" + std::to_string(i);
    f.image_path = "frames/" + f.frame_id + ".png";
    f.width = 32;
    f.height = 24;
    Annotation a;
    a.box = {0, 0.5, 0.5, 0.25, 0.25, std::nullopt};
    f.annotations.push_back(a);
    m.frames.push_back(f);
  }
  save_dataset(root, m);
}

}  // namespace

TEST_CASE("ingest is idempotent and guarded") {
  Cli cli;
  write_frames(cli.dir / "raw", 3);
  aldot::testing::write_text(cli.dir / "raw" / "notes.txt", "x");
  const json first = cli.run_json("ingest " + cli.path("raw") + " --out " + cli.path("ds"));
  CHECK(first["frames"] == 3);
  CHECK(first["changed"] == true);
  CHECK(fs::exists(cli.dir / "ds" / "frames" / "f1.png"));
  const DatasetManifest m = load_dataset(cli.dir / "ds");
  CHECK(m.frames.size() == 3);
  CHECK(m.frames[0].width == 32);

  CHECK(cli.run_json("ingest " + cli.path("raw") + " --out " + cli.path("ds"))["changed"] == false);
  const CommandResult clash = cli.run("ingest " + cli.path("raw") + " --out " + cli.path("ds") + " --classes dock");
  CHECK(clash.exit_code == 2);
  CHECK(error_kind(clash) == "conflict");
  CHECK(cli.run("ingest " + cli.path("raw") + " --out " + cli.path("ds") + " --classes dock --force").exit_code == 0);

  const CommandResult none = cli.run("ingest " + cli.path("raw") + " --out " + cli.path("ds2") + " --pattern '*.jpg'");
  CHECK(none.exit_code == 2);
  CHECK(error_kind(none) == "validation");
  CHECK(cli.run("ingest " + cli.path("raw") + " --out " + cli.path("ds3") + " --shift nope").exit_code == 2);
}

TEST_CASE("oracle labeling") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 4);
  const json out = cli.run_json("label " + cli.path("ds") + " --seed 3");
  CHECK(out["boxes"] == 4);
  const DatasetManifest m = load_dataset(cli.dir / "ds");
  CHECK(m.frames[0].annotations.size() == 2);
  CHECK(m.frames[0].annotations[1].provenance == Provenance::automatic);
  CHECK(m.frames[0].annotations[1].box.confidence == 0.97);
  CHECK(m.generated_by["seed"] == 3);
  CHECK(aldot::testing::read_text(cli.dir / "ds" / "labels" / "f0.txt") ==
        "0 0.500000 0.500000 0.250000 0.250000\n0 0.500000 0.500000 0.250000 0.250000 0.970000\n");

  CHECK(cli.run_json("label " + cli.path("ds") + " --seed 3")["changed"] == false);
  const CommandResult redo = cli.run("label " + cli.path("ds") + " --seed 4 --jitter 0.01");
  CHECK(redo.exit_code == 2);
  CHECK(cli.run("label " + cli.path("ds") + " --seed 4 --jitter 0.01 --force").exit_code == 0);
  CHECK(cli.run("label " + cli.path("ds") + " --detector psychic").exit_code == 2);
}

TEST_CASE("external detector labeling and failures") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 3);
  const json out = cli.run_json("label " + cli.path("ds") + " --detector cmd --cmd '" +
                                std::string(ALDOT_ECHO_DETECTOR) + "' --model-name stub");
  CHECK(out["boxes"] == 3);
  CHECK(load_dataset(cli.dir / "ds").frames[2].annotations[1].source_model == "stub");

  const CommandResult bad = cli.run("label " + cli.path("ds") + " --force --detector cmd --cmd '" +
                                    std::string(ALDOT_ECHO_DETECTOR) + " --bad-confidence'");
  CHECK(bad.exit_code == 3);
  CHECK(error_kind(bad) == "detector");
  CHECK(bad.err.find("confidence") != std::string::npos);

  const CommandResult missing = cli.run("label " + cli.path("nowhere"));
  CHECK(missing.exit_code == 4);
  CHECK(error_kind(missing) == "not_found");
}

TEST_CASE("sampling is reproducible") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 20);
  const json a = cli.run_json("sample " + cli.path("ds") + " --n 5 --seed 11");
  CHECK(a["sample_size"] == 5);
  CHECK(a["population_size"] == 20);
  CHECK(a["session_id"] == "review-11");
  CHECK(a["threshold"] == 0.95);
  CHECK(a["changed"] == true);
  const json b = cli.run_json("sample " + cli.path("ds") + " --n 5 --seed 11");
  CHECK(b["frames"] == a["frames"]);
  CHECK(b["changed"] == false);
  CHECK(cli.run("sample " + cli.path("ds") + " --n 6 --seed 11").exit_code == 2);
  CHECK(cli.run_json("sample " + cli.path("ds") + " --sigma 0.5 --seed 2")["sample_size"] == 20);

  const CommandResult env = aldot::testing::run_command(
      "ALDOT_DATASET=" + cli.path("ds") + " " + kCli + " sample --n 5 --seed 11", cli.dir.path());
  CHECK(env.exit_code == 0);
  CHECK(json::parse(env.out)["frames"] == a["frames"]);
  CHECK(cli.run("sample --n 5").exit_code == 2);
}

TEST_CASE("filter with and without a session") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 4);
  cli.run_json("label " + cli.path("ds") + " --conf-mean 0.9");
  const json plain = cli.run_json("filter " + cli.path("ds"));
  CHECK(plain["threshold"] == 0.95);
  CHECK(plain["boxes_kept"] == 4);
  CHECK(plain["boxes_dropped"] == 4);
  CHECK(aldot::testing::read_text(cli.dir / "ds" / "labels" / "f0.txt") == "0 0.500000 0.500000 0.250000 0.250000\n");
  CHECK(cli.run_json("filter " + cli.path("ds"))["changed"] == false);

  cli.run_json("sample " + cli.path("ds") + " --n 4 --session-id s");
  const CommandResult pending = cli.run("filter " + cli.path("ds") + " --session s");
  CHECK(pending.exit_code == 2);
  CHECK(error_kind(pending) == "conflict");

  ReviewSession s = load_review_session(cli.dir / "ds", "s");
  for (const auto& id : s.sampled_frame_ids) record_verdict(s, id, Verdict::accepted);
  save_review_session(cli.dir / "ds", s);
  const json applied = cli.run_json("filter " + cli.path("ds") + " --session s");
  CHECK(applied["acceptance_rate"] == 1.0);
  CHECK(applied["boxes_rejected"] == 4);
  CHECK(cli.run_json("filter " + cli.path("ds") + " --session s")["changed"] == false);
}

TEST_CASE("evaluate the hand fixture") {
  Cli cli;
  write_frames(cli.dir / "ds" / "frames", 1);
  DatasetManifest m;
  FrameRecord f;
  f.frame_id = "f0";
  f.image_path = "frames/f0.png";
  f.width = 32;
  f.height = 24;
  m.frames.push_back(f);
  save_dataset(cli.dir / "ds", m);
  aldot::testing::write_text(cli.dir / "truth" / "f0.txt",
                             "0 0.2 0.2 0.1 0.1\n0 0.7 0.7 0.1 0.1\n");
  aldot::testing::write_text(cli.dir / "pred" / "f0.txt",
                             "0 0.2 0.2 0.1 0.1 0.9\n0 0.45 0.45 0.1 0.1 0.8\n0 0.7 0.7 0.1 0.1 0.7\n");
  const std::string args = "evaluate " + cli.path("ds") + " --pred " + cli.path("pred") + " --truth " +
                           cli.path("truth") + " --iou 0.5";
  const CommandResult r = cli.run(args + " --out " + cli.path("eval.json"));
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("mAP (all-point)") != std::string::npos);
  CHECK(r.out.find("0.8333") != std::string::npos);
  const json doc = json::parse(aldot::testing::read_text(cli.dir / "eval.json"));
  CHECK(std::abs(doc["report"]["mean_average_precision"].get<double>() - 0.8333333333333333) < 1e-9);

  CHECK(cli.run(args + " --out " + cli.path("eval.json")).exit_code == 0);
  aldot::testing::write_text(cli.dir / "pred" / "f0.txt", "0 0.2 0.2 0.1 0.1\n");
  CHECK(cli.run(args).exit_code == 2);
  CHECK(cli.run("evaluate " + cli.path("ds") + " --pred " + cli.path("nopred")).exit_code == 4);

  const CommandResult rep = cli.run("report --ledger " + cli.path("ledger.json") + " --eval " + cli.path("eval.json"));
  CHECK(rep.exit_code == 0);
  CHECK(rep.out.find("0.8333") != std::string::npos);
}

TEST_CASE("reference ledger report") {
  Cli cli;
  aldot::testing::write_text(cli.dir / "yolo.json",
                             R"({"model":"YOLOv4","source":"training report","metrics":{"accuracy":0.954,"avg_loss":0.1942,"iou":0.95}})");
  aldot::testing::write_text(cli.dir / "mask.json",
                             R"({"model":"Mask R-CNN","source":"training report","metrics":{"accuracy":0.962,"avg_loss":0.0912,"iou":0.97}})");
  const std::string base = "report --ledger " + cli.path("ledger.json");
  CHECK(cli.run(base).out == "ledger is empty\n");
  const CommandResult r = cli.run(base + " --add " + cli.path("yolo.json") + " --add " + cli.path("mask.json") +
                                  " --add " + cli.path("yolo.json"));
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("YOLOv4 Average Loss") != std::string::npos);
  CHECK(r.out.find("0.0912") != std::string::npos);
  const json ledger = json::parse(aldot::testing::read_text(cli.dir / "ledger.json"));
  CHECK(ledger["entries"].size() == 2);

  aldot::testing::write_text(cli.dir / "bad.json", R"({"model":"x","source":"y","metrics":{"accuracy":7}})");
  CHECK(cli.run(base + " --add " + cli.path("bad.json")).exit_code == 2);
  aldot::testing::write_text(cli.dir / "broken.json", "{");
  CHECK(cli.run(base + " --add " + cli.path("broken.json")).exit_code == 2);
}

TEST_CASE("convert between darknet and coco") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 3);
  const json out = cli.run_json("convert " + cli.path("ds") + " --to coco --out " + cli.path("coco.json"));
  CHECK(out["images"] == 3);
  const json coco = json::parse(aldot::testing::read_text(cli.dir / "coco.json"));
  CHECK(coco["annotations"].size() == 3);
  CHECK(coco["annotations"][0]["category_id"] == 1);
  CHECK(cli.run_json("convert " + cli.path("ds") + " --to coco --out " + cli.path("coco.json"))["changed"] == false);

  const json back = cli.run_json("convert " + cli.path("coco.json") + " --from coco --to darknet --out " + cli.path("ds2"));
  CHECK(back["frames"] == 3);
  const DatasetManifest a = load_dataset(cli.dir / "ds");
  const DatasetManifest b = load_dataset(cli.dir / "ds2");
  REQUIRE(b.frames.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(b.frames[i].frame_id == a.frames[i].frame_id);
    REQUIRE(b.frames[i].annotations.size() == 1);
    CHECK(std::abs(b.frames[i].annotations[0].box.cx - a.frames[i].annotations[0].box.cx) < 1e-6);
  }
  CHECK(cli.run("convert " + cli.path("ds") + " --from yaml").exit_code == 2);
  CHECK(cli.run("convert " + cli.path("missing.json") + " --from coco --to darknet --out " + cli.path("ds3")).exit_code == 4);
}

TEST_CASE("simulate writes its logs") {
  Cli cli;
  const json s = cli.run_json("simulate --duration 2 --seed 4 --out " + cli.path("run"));
  CHECK(s["synthetic"] == true);
  CHECK(s["steps"] == 120);
  CHECK_FALSE(s.contains("config"));
  CHECK(fs::exists(cli.dir / "run" / "episode.csv"));
  const json summary = json::parse(aldot::testing::read_text(cli.dir / "run" / "summary.json"));
  CHECK(summary["config"]["seed"] == 4);
  CHECK(cli.run("simulate --duration 2 --seed 4 --out " + cli.path("run")).exit_code == 0);
  CHECK(cli.run("simulate --duration 2 --seed 5 --out " + cli.path("run")).exit_code == 2);
  CHECK(cli.run("simulate --duration 2 --seed 5 --out " + cli.path("run") + " --force").exit_code == 0);

  aldot::testing::write_text(cli.dir / "ep.json", R"({"controller": {"kp": 6, "max_speed": 2}, "fps": {"min": 58, "max": 65}})");
  CHECK(cli.run("simulate --duration 1 --episode " + cli.path("ep.json")).exit_code == 0);
  aldot::testing::write_text(cli.dir / "bad.json", R"({"controller": {"kp": -1}})");
  CHECK(cli.run("simulate --episode " + cli.path("bad.json")).exit_code == 2);
}

TEST_CASE("review-serve answers until signalled") {
  Cli cli;
  make_truth_dataset(cli.dir / "ds", 3);
  cli.run_json("sample " + cli.path("ds") + " --n 3 --session-id s");
  const std::string port_file = cli.path("port");
  const std::string cmd = kCli + " review-serve " + cli.path("ds") + " --session s --port 0 --port-file " +
                          port_file + " >" + cli.path("serve.out") + " 2>&1 & echo $! >" + cli.path("pid");
  REQUIRE(std::system(cmd.c_str()) == 0);
  int port = 0;
  for (int i = 0; i < 200 && port == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    const std::string text = aldot::testing::read_text(port_file);
    if (!text.empty()) port = std::stoi(text);
  }
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/session");
  REQUIRE(res);
  CHECK(json::parse(res->body)["total"] == 3);
  const pid_t pid = std::stoi(aldot::testing::read_text(cli.dir / "pid"));
  CHECK(::kill(pid, SIGTERM) == 0);
  bool exited = false;
  for (int i = 0; i < 200 && !exited; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    exited = ::kill(pid, 0) != 0;
  }
  CHECK(exited);
}

TEST_CASE("usage errors") {
  Cli cli;
  CHECK(cli.run("").exit_code == 2);
  CHECK(cli.run("frobnicate").exit_code == 2);
  CHECK(cli.run("--help").exit_code == 0);
}
