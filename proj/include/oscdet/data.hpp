#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oscdet/siggen.hpp"

namespace oscdet {

// Class-index convention for binary models: 0 = oscillation, 1 = normal.
// Frequency-class models use 0 = normal and k = oscillation at ~k Hz.
enum class WindowClass { oscillation, normal };

struct WindowLabel {
  WindowClass cls = WindowClass::normal;
  int frequency_class = 0;

  friend bool operator==(const WindowLabel&, const WindowLabel&) = default;
};

inline constexpr int kOscillationClass = 0;
inline constexpr int kNormalClass = 1;
inline constexpr int kMaxFrequencyClass = 15;

// Training target for a model with n_classes outputs (2 or 16).
int class_index(const WindowLabel& label, int n_classes);

enum class Normalization { zscore, minmax };

struct Window {
  Eigen::VectorXd samples;
  double t_start_epoch_s = 0.0;
  std::string terminal_id;
  std::optional<WindowLabel> label;
};

enum class Provenance { synthetic, recorded, mixed };

struct LabeledDataset {
  std::vector<Window> windows;
  Provenance provenance = Provenance::synthetic;

  std::size_t size() const { return windows.size(); }
  std::map<int, std::size_t> class_counts(int n_classes) const;
};

struct Gap {
  double last_before_epoch_s = 0.0;
  double first_after_epoch_s = 0.0;
};

struct TerminalRecord {
  std::string terminal_id;
  double sample_rate_hz = 30.0;
  std::vector<double> timestamps;
  std::vector<double> values;
  std::vector<Gap> gaps;
  std::size_t skipped_rows = 0;

  std::size_t size() const { return values.size(); }
};

// Per-window normalization. z-score uses the population std; constant
// windows map to zeros. min-max maps to [0, 1].
Eigen::VectorXd normalize_window(std::span<const double> raw, Normalization method = Normalization::zscore);

struct SliceOptions {
  double window_s = 1.0;
  double stride_s = 1.0;
  Normalization normalization = Normalization::zscore;
};

// Windows of round(window_s * rate) consecutive, gap-free samples, started
// every round(stride_s * rate) samples on the record's time grid.
std::vector<Window> slice_windows(const TimeSeries& series, const SliceOptions& options = {},
                                  const std::string& terminal_id = "synthetic");
std::vector<Window> slice_windows(const TerminalRecord& record, const SliceOptions& options = {});

// Oscillation iff at least half of [start_s, end_s) lies inside one
// annotation; times are relative to the series start.
WindowLabel label_window(double start_s, double end_s, const std::vector<EventAnnotation>& annotations);

// Labels windows sliced from a series whose first sample is at t0_epoch_s.
void label_windows(std::vector<Window>& windows, double t0_epoch_s, double window_s,
                   const std::vector<EventAnnotation>& annotations);

// Slices and labels a sweep of synthetic traces into one dataset.
LabeledDataset windows_from_series(const std::vector<TimeSeries>& traces, const SliceOptions& options = {});

// First `minutes_per_class` minutes of each binary class, in time order.
LabeledDataset balanced_truncate(const std::vector<Window>& windows, double minutes_per_class = 2.0,
                                 double stride_s = 1.0);

// Stratified split; `ratio` is validation size over training size (0.25
// sends one window in five to validation).
std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& dataset, double ratio,
                                                          std::uint64_t seed);

// ---- files ---------------------------------------------------------------

double parse_iso8601(std::string_view text);
std::string format_iso8601(double epoch_s);

// Terminal ids from the CSV header.
std::vector<std::string> list_terminals(const std::filesystem::path& path);

// Streams the file keeping only the requested column. Malformed rows and
// empty cells are skipped and counted; gaps are recorded. If sample_rate_hz
// is not given it is inferred from the median timestamp spacing.
TerminalRecord ingest_pmu_csv(const std::filesystem::path& path, const std::string& terminal,
                              std::optional<double> sample_rate_hz = std::nullopt);

void write_pmu_csv(const std::filesystem::path& path, const TimeSeries& series, const std::string& terminal_id);

void write_annotations(const std::filesystem::path& path, const std::vector<EventAnnotation>& annotations);
std::vector<EventAnnotation> read_annotations(const std::filesystem::path& path);

// Every <name>.csv in `dir` in name order, first terminal column, labeled
// from the <name>.events sidecar (all normal when there is none).
LabeledDataset load_labeled_directory(const std::filesystem::path& dir, const SliceOptions& options = {});

}  // namespace oscdet
