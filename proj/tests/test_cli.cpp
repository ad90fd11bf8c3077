#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "oscdet/data.hpp"
#include "oscdet/detector.hpp"
#include "oscdet/metrics.hpp"
#include "oscdet/models.hpp"

#ifndef OSCDET_CLI_PATH
#error "OSCDET_CLI_PATH must point at the oscdet binary"
#endif

using namespace oscdet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(OSCDET_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  std::FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string field(const std::string& records, const std::string& key) {
  const auto at = records.find(key + "=");
  if (at == std::string::npos) return {};
  const auto start = at + key.size() + 1;
  return records.substr(start, records.find_first_of(",\n", start) - start);
}

// One small corpus, one trained model and a long evaluation trace, shared by
// every case in this file.
struct Workspace {
  fs::path dir;
  fs::path model;

  Workspace() {
    dir = fs::temp_directory_path() / ("oscdet_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    model = dir / "conv.bin";
    REQUIRE(run("gen --sweep 1:14 --n-per-class 2 --seed 3 --out " + (dir / "corpus").string()).code == 0);
    REQUIRE(run("train --data " + (dir / "corpus").string() + " --arch conv1d --epochs 8 --seed 5 --out " +
                model.string())
                .code == 0);

    std::ofstream(dir / "long.json") << R"({"duration_s": 600, "osc_on_s": 200, "osc_off_s": 440,
      "osc_frequency_hz": 4, "seed": 99, "terminal": "BUS1",
      "ramp_up": {"start_s": 190, "end_s": 210}, "ramp_down": {"start_s": 430, "end_s": 450}})";
    REQUIRE(run("gen --config " + (dir / "long.json").string() + " --out " + (dir / "long").string()).code == 0);

    std::ofstream(dir / "quiet.json") << R"({"osc_amplitude": 0, "seed": 7, "terminal": "BUS1"})";
    REQUIRE(run("gen --config " + (dir / "quiet.json").string() + " --out " + (dir / "quiet").string()).code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string trace(const std::string& name) const { return (dir / name / "trace_0000.csv").string(); }
  std::string events(const std::string& name) const { return (dir / name / "trace_0000.events").string(); }
};

const Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run("").code == 1);
  CHECK(run("--help").code == 0);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("gen").code == 1);

  const auto dir = fs::temp_directory_path() / ("oscdet_cli_codes_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"osc_frequency_hz": 20})";
  std::ofstream(dir / "typo.json") << R"({"durration_s": 20})";
  std::ofstream(dir / "junk.bin") << "not a model";
  std::ofstream(dir / "x.csv") << "timestamp,T1\n";
  CHECK(run("gen --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()).code == 1);
  CHECK(run("gen --config " + (dir / "typo.json").string() + " --out " + (dir / "o").string()).code == 1);
  CHECK(run("gen --sweep 3:20 --out " + (dir / "o").string()).code == 1);
  CHECK(run("bench --model " + (dir / "junk.bin").string()).code == 2);
  CHECK(run("detect --model " + (dir / "junk.bin").string() + " --csv " + (dir / "x.csv").string() +
            " --terminal T1")
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("training is byte-reproducible") {
  const auto& ws = workspace();
  const auto a = ws.dir / "dense_a.bin", b = ws.dir / "dense_b.bin";
  const std::string common = "train --data " + (ws.dir / "corpus").string() + " --arch dense --epochs 2 --seed 11 --out ";
  REQUIRE(run(common + a.string()).code == 0);
  REQUIRE(run(common + b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(ws.model));
}

TEST_CASE("generate, train and evaluate end to end") {
  const auto& ws = workspace();
  const auto r = run("eval --model " + ws.model.string() + " --csv " + ws.trace("long") +
                     " --terminal BUS1 --annotations " + ws.events("long") + " --balanced-minutes 2 --format records");
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "n_samples") == "240");
  const double acc = std::stod(field(r.out, "accuracy"));
  MESSAGE("balanced accuracy " << acc);
  CHECK(acc >= 0.95);
}

TEST_CASE("eval of detect flags matches the in-process evaluation") {
  const auto& ws = workspace();
  const auto flags = run("detect --model " + ws.model.string() + " --csv " + ws.trace("long") +
                         " --terminal BUS1 --format records");
  REQUIRE(flags.code == 0);
  std::ofstream(ws.dir / "flags.txt") << flags.out;

  const auto cli = run("eval --model " + ws.model.string() + " --csv " + ws.trace("long") +
                       " --terminal BUS1 --annotations " + ws.events("long") + " --flags " +
                       (ws.dir / "flags.txt").string() + " --format records");
  REQUIRE(cli.code == 0);

  const auto model = load_model(ws.model);
  auto windows = slice_windows(ingest_pmu_csv(ws.trace("long"), "BUS1"));
  label_windows(windows, windows.front().t_start_epoch_s, 1.0, read_annotations(ws.events("long")));
  std::vector<int> pred, truth;
  for (const auto& f : classify_windows(model, windows)) pred.push_back(f.flag);
  for (const auto& w : windows) truth.push_back(w.label->cls == WindowClass::oscillation ? kFlagOscillation : kFlagNormal);
  const auto report = compute_metrics(pred, truth);

  CHECK(field(cli.out, "n_samples") == std::to_string(report.n_samples));
  CHECK(field(cli.out, "false_positives") == std::to_string(report.false_positives));
  CHECK(field(cli.out, "missed_events") == std::to_string(report.missed_events));
}

TEST_CASE("detect reports one event on the long trace and none on a quiet one") {
  const auto& ws = workspace();
  const auto busy = run("detect --model " + ws.model.string() + " --csv " + ws.trace("long") +
                        " --terminal BUS1 --format records");
  REQUIRE(busy.code == 0);
  CHECK(field(busy.out, "summary,events") == "1");

  const auto quiet = run("detect --model " + ws.model.string() + " --csv " + ws.trace("quiet") +
                         " --terminal BUS1 --format records");
  REQUIRE(quiet.code == 0);
  CHECK(field(quiet.out, "summary,events") == "0");
  CHECK(quiet.out.find("\nevent,") == std::string::npos);

  CHECK(run("detect --model " + ws.model.string() + " --csv " + ws.trace("quiet") + " --terminal NOPE").code == 2);
}

TEST_CASE("bench prints the requested count") {
  const auto& ws = workspace();
  const auto r = run("bench --model " + ws.model.string() + " --n 25 --warmup 2 --format records");
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "n_predictions") == "25");
}
