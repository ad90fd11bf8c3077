#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

#include <unistd.h>

#include "oscdet/data.hpp"
#include "oscdet/error.hpp"

using namespace oscdet;
namespace fs = std::filesystem;

// Live-heap accounting for the bounded-memory test. Each block carries its
// size in a 16-byte header so deletes can be credited back.
namespace {
std::atomic<std::size_t> g_live{0}, g_peak{0};

void* tracked_alloc(std::size_t n) {
  void* p = std::malloc(n + 16);
  if (!p) throw std::bad_alloc();
  *static_cast<std::size_t*>(p) = n;
  const std::size_t now = g_live.fetch_add(n) + n;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
  return static_cast<char*>(p) + 16;
}

void tracked_free(void* p) noexcept {
  if (!p) return;
  void* base = static_cast<char*>(p) - 16;
  g_live.fetch_sub(*static_cast<std::size_t*>(base));
  std::free(base);
}
}  // namespace

void* operator new(std::size_t n) { return tracked_alloc(n); }
void* operator new[](std::size_t n) { return tracked_alloc(n); }
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("oscdet_csv_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("ISO-8601 parsing and formatting") {
  CHECK(parse_iso8601("2020-01-01T00:00:00Z") == 1577836800.0);
  CHECK(parse_iso8601("2020-01-01 00:00:01.5") == 1577836801.5);
  CHECK(parse_iso8601("1970-01-01T00:00:00+00:00") == 0.0);
  CHECK(format_iso8601(1577836800.0) == "2020-01-01T00:00:00.000000Z");
  for (const char* bad : {"2020-13-01T00:00:00Z", "2020-01-01", "2020-01-01T00:00:00+01:00", "garbage-text-here!!"})
    CHECK_THROWS_AS(parse_iso8601(bad), DataError);

  for (int i = 0; i < 2000; ++i) {
    const double t = 1577836800.0 + i * 3607.0 / 30.0;
    CHECK(std::abs(parse_iso8601(format_iso8601(t)) - t) < 1e-6);
  }
}

TEST_CASE("multi-terminal file, gaps and skipped rows") {
  TempDir dir;
  const auto file = dir.path / "three.csv";
  std::string text = "timestamp,T1,T2,T3\n";
  for (int i = 0; i < 90; ++i) {
    const std::string ts = format_iso8601(1577836800.0 + i / 30.0);
    const std::string t2 = (i == 40) ? "" : std::to_string(60.0 + i * 1e-3);
    text += ts + ",59.9," + t2 + ",60.1\n";
  }
  text += "not-a-time,1,2,3\n";
  write_text(file, text);

  CHECK(list_terminals(file) == std::vector<std::string>{"T1", "T2", "T3"});
  const auto rec = ingest_pmu_csv(file, "T2");
  CHECK(rec.terminal_id == "T2");
  CHECK(rec.size() == 89);
  CHECK(rec.skipped_rows == 2);
  CHECK(rec.sample_rate_hz == 30.0);
  REQUIRE(rec.gaps.size() == 1);
  CHECK(rec.gaps[0].last_before_epoch_s == doctest::Approx(1577836800.0 + 39 / 30.0));
  CHECK(slice_windows(rec).size() == 2);
  CHECK(ingest_pmu_csv(file, "T3").values.front() == 60.1);

  try {
    (void)ingest_pmu_csv(file, "T9");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("T9") != std::string::npos);
    CHECK(msg.find("T1, T2, T3") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_pmu_csv(dir.path / "missing.csv", "T1"), DataError);
  write_text(dir.path / "bad.csv", "time,T1\n");
  CHECK_THROWS_AS(list_terminals(dir.path / "bad.csv"), DataError);
}

TEST_CASE("generated traces survive a file round trip") {
  TempDir dir;
  SignalConfig cfg;
  cfg.duration_s = 30.0;
  cfg.osc_on_s = 10.0;
  cfg.osc_off_s = 20.0;
  const auto ts = generate_series(cfg);
  write_pmu_csv(dir.path / "t.csv", ts, "BUS7");
  write_annotations(dir.path / "t.events", ts.annotations);

  const auto rec = ingest_pmu_csv(dir.path / "t.csv", "BUS7");
  REQUIRE(rec.size() == static_cast<std::size_t>(ts.values.size()));
  for (std::size_t i = 0; i < rec.size(); ++i) CHECK(std::abs(rec.values[i] - ts.values[static_cast<Eigen::Index>(i)]) < 1e-9);
  CHECK(rec.timestamps.front() == cfg.start_epoch_s);

  const auto ann = read_annotations(dir.path / "t.events");
  REQUIRE(ann.size() == 1);
  CHECK(ann[0].start_s == 10.0);
  CHECK(ann[0].end_s == 20.0);
  CHECK(ann[0].osc_frequency_hz == 3.0);

  const auto ds = load_labeled_directory(dir.path);
  CHECK(ds.size() == 30);
  CHECK(ds.class_counts(2).at(kOscillationClass) == 10);

  write_text(dir.path / "x.events", "5,3,1\n");
  CHECK_THROWS_AS(read_annotations(dir.path / "x.events"), DataError);
  write_text(dir.path / "y.events", "0,10,1\n5,12,2\n");
  CHECK_THROWS_AS(read_annotations(dir.path / "y.events"), DataError);
}

TEST_CASE("ingest memory does not grow with the number of columns") {
  TempDir dir;
  const auto file = dir.path / "wide.csv";
  const int columns = 200, rows = 3000;
  {
    std::FILE* f = std::fopen(file.c_str(), "w");
    REQUIRE(f);
    std::fprintf(f, "timestamp");
    for (int c = 0; c < columns; ++c) std::fprintf(f, ",T%d", c);
    std::fprintf(f, "\n");
    for (int r = 0; r < rows; ++r) {
      std::fprintf(f, "%s", format_iso8601(1577836800.0 + r / 30.0).c_str());
      for (int c = 0; c < columns; ++c) std::fprintf(f, ",%.6f", 60.0 + c * 1e-4 + r * 1e-6);
      std::fprintf(f, "\n");
    }
    std::fclose(f);
  }
  const auto file_bytes = fs::file_size(file);

  const std::size_t before = g_live.load();
  g_peak.store(before);
  const auto rec = ingest_pmu_csv(file, "T150");
  const std::size_t peak = g_peak.load() - before;
  CHECK(rec.size() == static_cast<std::size_t>(rows));
  MESSAGE("peak heap " << peak << " bytes for a " << file_bytes << " byte file");
  // Two growing vectors of doubles plus one line buffer.
  const std::size_t budget = 4 * 2 * rows * sizeof(double) + 64 * 1024;
  CHECK(peak < budget);
  CHECK(peak * 20 < file_bytes);
}
