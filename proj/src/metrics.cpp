#include "oscdet/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "oscdet/detector.hpp"
#include "oscdet/error.hpp"
#include "oscdet/rng.hpp"

namespace oscdet {

EvalReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth) {
  if (predictions.size() != truth.size())
    throw DataError("prediction/truth length mismatch: " + std::to_string(predictions.size()) + " vs " +
                    std::to_string(truth.size()));
  EvalReport r;
  r.n_samples = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool said_osc = predictions[i] == kFlagOscillation;
    if (truth[i] == kFlagOscillation)
      (said_osc ? r.true_positives : r.missed_events)++;
    else
      (said_osc ? r.false_positives : r.true_negatives)++;
  }
  r.accuracy = r.n_samples == 0 ? 0.0
                                : static_cast<double>(r.n_samples - r.false_positives - r.missed_events) /
                                      static_cast<double>(r.n_samples);
  return r;
}

std::string format_report_text(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "# false positives and missed events count windows, not coalesced events\n"
                "samples          %zu\n"
                "accuracy         %.4f\n"
                "false positives  %zu\n"
                "missed events    %zu\n"
                "confusion        truth\\pred  osc  normal\n"
                "                 osc         %zu  %zu\n"
                "                 normal      %zu  %zu\n",
                r.n_samples, r.accuracy, r.false_positives, r.missed_events, r.true_positives, r.missed_events,
                r.false_positives, r.true_negatives);
  return buf;
}

std::string format_report_records(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "n_samples=%zu,accuracy=%.6f,false_positives=%zu,missed_events=%zu,tp=%zu,tn=%zu\n",
                r.n_samples, r.accuracy, r.false_positives, r.missed_events, r.true_positives, r.true_negatives);
  return buf;
}

std::string hardware_descriptor() {
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line, model = "unknown CPU";
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + " (" + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " threads)";
}

LatencyReport summarize_latency(std::vector<double> samples, std::string hardware) {
  LatencyReport r;
  r.n_predictions = samples.size();
  r.hardware = std::move(hardware);
  r.samples_s = samples;
  if (samples.empty()) return r;
  r.mean_s = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  std::sort(samples.begin(), samples.end());
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()))) - 1;
    return samples[std::min(idx, samples.size() - 1)];
  };
  r.median_s = samples.size() % 2 ? samples[samples.size() / 2]
                                  : 0.5 * (samples[samples.size() / 2 - 1] + samples[samples.size() / 2]);
  r.p99_s = at(0.99);
  return r;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> bench_inference(const TrainedModel& model, const BenchOptions& opt) {
  const auto width = static_cast<std::size_t>(model.spec().input_len * model.spec().input_channels);
  Rng rng = make_rng(opt.seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> windows(opt.n + opt.warmup, std::vector<double>(width));
  for (auto& w : windows) {
    for (auto& v : w) v = n01(rng);
    const auto z = normalize_window(w);
    std::copy(z.data(), z.data() + z.size(), w.begin());
  }

  std::vector<double> samples;
  samples.reserve(opt.n);
  double sink = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto t0 = Clock::now();
    const Eigen::VectorXd p = model.predict_proba(windows[i]);
    const auto t1 = Clock::now();
    sink += p[0];
    if (i >= opt.warmup) samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  if (!std::isfinite(sink)) throw NumericError("benchmark produced non-finite output");
  return samples;
}

std::vector<double> bench_stream(const TrainedModel& model, const BenchOptions& opt) {
  StreamConfig cfg;
  StreamState state(model, cfg);
  Rng rng = make_rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 0.002);
  const std::size_t width = state.window_size();
  std::vector<double> samples;
  samples.reserve(opt.n);
  double t = 1.6e9;
  for (std::size_t i = 0; i < opt.n + opt.warmup; ++i) {
    for (std::size_t k = 0; k + 1 < width; ++k, t += 1.0 / cfg.sample_rate_hz) {
      state.push_sample(t, 60.0 + noise(rng));
      (void)state.step();
    }
    const double last = 60.0 + noise(rng);
    const auto t0 = Clock::now();
    state.push_sample(t, last);
    const auto flag = state.step();
    const auto t1 = Clock::now();
    t += 1.0 / cfg.sample_rate_hz;
    if (!flag) throw NumericError("stream benchmark did not emit a flag on a full window");
    if (i >= opt.warmup) samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return samples;
}

}  // namespace

LatencyReport bench_latency(const TrainedModel& model, const BenchOptions& opt) {
  if (opt.n == 0) throw ConfigError("benchmark needs at least one prediction");
  return summarize_latency(opt.end_to_end ? bench_stream(model, opt) : bench_inference(model, opt),
                           hardware_descriptor());
}

std::string format_latency_text(const LatencyReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "hardware     %s\n"
                "predictions  %zu\n"
                "mean         %.6f s\n"
                "median       %.6f s\n"
                "p99          %.6f s\n",
                r.hardware.c_str(), r.n_predictions, r.mean_s, r.median_s, r.p99_s);
  return buf;
}

std::string format_latency_records(const LatencyReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "n_predictions=%zu,mean_s=%.9f,median_s=%.9f,p99_s=%.9f,hardware=%s\n",
                r.n_predictions, r.mean_s, r.median_s, r.p99_s, r.hardware.c_str());
  return buf;
}

}  // namespace oscdet
