#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "oscdet/models.hpp"

namespace oscdet {

// Window-level detection metrics; oscillation is the positive class.
struct EvalReport {
  std::size_t n_samples = 0;
  std::size_t true_positives = 0;   // oscillation flagged oscillation
  std::size_t false_positives = 0;  // normal flagged oscillation
  std::size_t missed_events = 0;    // oscillation flagged normal
  std::size_t true_negatives = 0;   // normal flagged normal
  double accuracy = 0.0;
};

// `predictions` and `truth` are flags (0 oscillation, 1 normal).
EvalReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth);

std::string format_report_text(const EvalReport& report);
std::string format_report_records(const EvalReport& report);

struct LatencyReport {
  std::size_t n_predictions = 0;
  double mean_s = 0.0;
  double median_s = 0.0;
  double p99_s = 0.0;
  std::string hardware;
  std::vector<double> samples_s;
};

struct BenchOptions {
  std::size_t n = 1000;
  std::size_t warmup = 50;
  std::uint64_t seed = 7;
  // Time push-of-last-sample to flag through StreamState instead of bare
  // inference.
  bool end_to_end = false;
};

// Times predict_proba on pre-generated distinct windows (normalization and
// input preparation excluded) with a monotonic clock.
LatencyReport bench_latency(const TrainedModel& model, const BenchOptions& options = {});

LatencyReport summarize_latency(std::vector<double> samples_s, std::string hardware);
std::string hardware_descriptor();

std::string format_latency_text(const LatencyReport& report);
std::string format_latency_records(const LatencyReport& report);

}  // namespace oscdet
