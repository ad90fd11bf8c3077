#include "oscdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "oscdet/error.hpp"
#include "oscdet/rng.hpp"

namespace oscdet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Window> slice_slots(const std::vector<double>& values, const std::vector<double>& times, double rate,
                                const SliceOptions& options, const std::string& terminal) {
  if (!(options.stride_s > 0.0)) throw ConfigError("slice stride must be positive");
  if (!(options.window_s > 0.0)) throw ConfigError("slice window must be positive");
  const auto width = static_cast<std::size_t>(std::llround(options.window_s * rate));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.stride_s * rate)));
  std::vector<Window> out;
  if (width == 0 || values.size() < width) return out;

  for (std::size_t start = 0; start + width <= values.size(); start += stride) {
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(start);
    if (std::any_of(first, first + static_cast<std::ptrdiff_t>(width), [](double v) { return !std::isfinite(v); }))
      continue;
    Window w;
    w.samples = normalize_window(std::span<const double>(&*first, width), options.normalization);
    w.t_start_epoch_s = times[start];
    w.terminal_id = terminal;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

int class_index(const WindowLabel& label, int n_classes) {
  if (n_classes == 2) return label.cls == WindowClass::oscillation ? kOscillationClass : kNormalClass;
  if (n_classes == 16) return label.cls == WindowClass::oscillation ? label.frequency_class : 0;
  throw ConfigError("unsupported class count " + std::to_string(n_classes) + " (expected 2 or 16)");
}

std::map<int, std::size_t> LabeledDataset::class_counts(int n_classes) const {
  std::map<int, std::size_t> counts;
  for (const auto& w : windows) {
    if (!w.label) throw DataError("dataset contains an unlabeled window");
    ++counts[class_index(*w.label, n_classes)];
  }
  return counts;
}

Eigen::VectorXd normalize_window(std::span<const double> raw, Normalization method) {
  // Copied so the reduction order does not depend on the caller's alignment.
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  if (x.size() == 0) return out;
  if (method == Normalization::zscore) {
    const double mean = x.mean();
    const Eigen::VectorXd centered = x.array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(x.size()));
    // Relative guard: a constant window can leave rounding residue.
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) out = centered / sd;
  } else {
    const double lo = x.minCoeff(), hi = x.maxCoeff();
    if (hi - lo > 1e-12 * std::max(1.0, std::abs(hi))) out = (x.array() - lo) / (hi - lo);
  }
  return out;
}

std::vector<Window> slice_windows(const TimeSeries& series, const SliceOptions& options,
                                  const std::string& terminal_id) {
  std::vector<double> values(series.values.data(), series.values.data() + series.values.size());
  std::vector<double> times(values.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    times[i] = series.t0_epoch_s + static_cast<double>(i) / series.sample_rate_hz;
  return slice_slots(values, times, series.sample_rate_hz, options, terminal_id);
}

std::vector<Window> slice_windows(const TerminalRecord& record, const SliceOptions& options) {
  if (record.values.empty()) return {};
  // Place samples on the nominal grid anchored at the first timestamp;
  // samples further than 20% of a period from their slot are discarded.
  const double rate = record.sample_rate_hz;
  const double t0 = record.timestamps.front();
  const auto last = std::llround((record.timestamps.back() - t0) * rate);
  std::vector<double> values(static_cast<std::size_t>(last + 1), kNaN);
  std::vector<double> times(values.size());
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = t0 + static_cast<double>(i) / rate;
  for (std::size_t i = 0; i < record.values.size(); ++i) {
    const double offset = (record.timestamps[i] - t0) * rate;
    const auto slot = std::llround(offset);
    if (std::abs(offset - static_cast<double>(slot)) > 0.2) continue;
    auto& v = values[static_cast<std::size_t>(slot)];
    if (std::isnan(v)) {
      v = record.values[i];
      times[static_cast<std::size_t>(slot)] = record.timestamps[i];
    }
  }
  return slice_slots(values, times, rate, options, record.terminal_id);
}

WindowLabel label_window(double start_s, double end_s, const std::vector<EventAnnotation>& annotations) {
  const double span = end_s - start_s;
  for (const auto& a : annotations) {
    const double overlap = std::min(end_s, a.end_s) - std::max(start_s, a.start_s);
    if (span > 0.0 && overlap >= 0.5 * span) {
      const int fc = std::clamp(static_cast<int>(std::lround(a.osc_frequency_hz)), 1, kMaxFrequencyClass);
      return {WindowClass::oscillation, fc};
    }
  }
  return {WindowClass::normal, 0};
}

void label_windows(std::vector<Window>& windows, double t0_epoch_s, double window_s,
                   const std::vector<EventAnnotation>& annotations) {
  for (auto& w : windows) {
    const double start = w.t_start_epoch_s - t0_epoch_s;
    w.label = label_window(start, start + window_s, annotations);
  }
}

LabeledDataset windows_from_series(const std::vector<TimeSeries>& traces, const SliceOptions& options) {
  LabeledDataset ds;
  ds.provenance = Provenance::synthetic;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto windows = slice_windows(traces[i], options, "trace" + std::to_string(i));
    label_windows(windows, traces[i].t0_epoch_s, options.window_s, traces[i].annotations);
    std::move(windows.begin(), windows.end(), std::back_inserter(ds.windows));
  }
  return ds;
}

LabeledDataset balanced_truncate(const std::vector<Window>& windows, double minutes_per_class, double stride_s) {
  if (!(minutes_per_class > 0.0) || !(stride_s > 0.0)) throw ConfigError("balanced_truncate: bad minutes or stride");
  const auto need = static_cast<std::size_t>(std::llround(minutes_per_class * 60.0 / stride_s));

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return windows[a].t_start_epoch_s < windows[b].t_start_epoch_s;
  });

  std::vector<std::size_t> osc, normal;
  for (auto i : order) {
    if (!windows[i].label) throw DataError("balanced_truncate: unlabeled window");
    (windows[i].label->cls == WindowClass::oscillation ? osc : normal).push_back(i);
  }
  if (osc.size() < need || normal.size() < need) {
    std::string msg = "insufficient material for " + std::to_string(need) + " windows per class:";
    if (normal.size() < need) msg += " normal short by " + std::to_string(need - normal.size());
    if (osc.size() < need) msg += " oscillation short by " + std::to_string(need - osc.size());
    throw DataError(msg);
  }
  osc.resize(need);
  normal.resize(need);
  std::vector<std::size_t> keep;
  std::merge(normal.begin(), normal.end(), osc.begin(), osc.end(), std::back_inserter(keep),
             [&](std::size_t a, std::size_t b) { return windows[a].t_start_epoch_s < windows[b].t_start_epoch_s; });
  LabeledDataset ds;
  ds.provenance = Provenance::recorded;
  for (auto i : keep) ds.windows.push_back(windows[i]);
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& dataset, double ratio,
                                                          std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("validation ratio must lie in (0, 1)");

  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  std::size_t n_osc = 0, n_normal = 0;
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    const auto& label = dataset.windows[i].label;
    if (!label) throw DataError("split_train_val: unlabeled window");
    (label->cls == WindowClass::oscillation ? n_osc : n_normal)++;
    strata[{static_cast<int>(label->cls), label->frequency_class}].push_back(i);
  }
  if (n_osc < 2 || n_normal < 2)
    throw DataError("split_train_val: every class needs at least 2 windows (oscillation " + std::to_string(n_osc) +
                    ", normal " + std::to_string(n_normal) + ")");

  const double fraction = ratio / (1.0 + ratio);
  std::vector<bool> to_val(dataset.windows.size(), false);
  for (auto& [key, idx] : strata) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second)});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < n_val; ++j) to_val[idx[j]] = true;
  }

  std::pair<LabeledDataset, LabeledDataset> out;
  out.first.provenance = out.second.provenance = dataset.provenance;
  for (std::size_t i = 0; i < dataset.windows.size(); ++i)
    (to_val[i] ? out.second : out.first).windows.push_back(dataset.windows[i]);
  return out;
}

}  // namespace oscdet
