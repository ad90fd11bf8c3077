#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "oscdet/data.hpp"
#include "oscdet/models.hpp"

namespace oscdet {

inline constexpr int kFlagOscillation = 0;
inline constexpr int kFlagNormal = 1;

// One per-window decision. `probability` is the oscillation probability.
struct FlagRecord {
  double t_epoch_s = 0.0;      // first sample of the window
  double t_end_epoch_s = 0.0;  // t_epoch_s + window length
  int flag = kFlagNormal;
  double probability = 0.0;
  int frequency_class = 0;  // argmax class of a 16-class model, else 0
};

struct StreamConfig {
  double sample_rate_hz = 30.0;
  double window_s = 1.0;
  double stride_s = 1.0;
  double gap_reset_periods = 3.0;  // a gap longer than this many periods clears the buffer
  Normalization normalization = Normalization::zscore;
};

// Per-terminal streaming state. Not thread-safe; distinct terminals may
// share one model.
class StreamState {
 public:
  StreamState(const TrainedModel& model, StreamConfig config = {});

  // Returns false (and counts) when the sample is out of order or non-finite.
  bool push_sample(double t_epoch_s, double frequency_hz);

  // Classifies the oldest full window if one is ready, then advances by the
  // stride.
  std::optional<FlagRecord> step();

  std::size_t buffered() const noexcept { return buffer_.size(); }
  std::size_t window_size() const noexcept { return width_; }
  std::size_t rejected_out_of_order() const noexcept { return rejected_order_; }
  std::size_t rejected_non_finite() const noexcept { return rejected_non_finite_; }
  std::size_t resets() const noexcept { return resets_; }

 private:
  struct Sample {
    double t;
    double f;
  };

  const TrainedModel* model_;
  StreamConfig config_;
  std::size_t width_;
  std::size_t stride_;
  std::deque<Sample> buffer_;
  std::size_t skip_ = 0;  // samples still to drop when stride > width
  std::optional<double> last_t_;
  std::size_t rejected_order_ = 0;
  std::size_t rejected_non_finite_ = 0;
  std::size_t resets_ = 0;
};

// Flag for one normalized window, shared by the batch and streaming paths.
FlagRecord classify_window(const TrainedModel& model, const Window& window, double window_s = 1.0);
std::vector<FlagRecord> classify_windows(const TrainedModel& model, const std::vector<Window>& windows,
                                         double window_s = 1.0);

struct DetectionEvent {
  double start_epoch_s = 0.0;
  double end_epoch_s = 0.0;
  bool open = false;  // stream ended while the event was active
  double peak_probability = 0.0;
  std::size_t window_count = 0;  // oscillation flags inside the event
  std::optional<int> dominant_frequency_class;

  double duration_s() const { return end_epoch_s - start_epoch_s; }
};

// Incremental debounce: an event opens after `debounce` consecutive
// oscillation flags (start backdated to the first of them) and closes after
// `debounce` consecutive normal flags (end = end of the last oscillation
// window).
class EventCoalescer {
 public:
  explicit EventCoalescer(std::size_t debounce = 3);

  // Returns the event closed by this flag, if any.
  std::optional<DetectionEvent> push(const FlagRecord& flag);
  // Returns the still-open event, if any, marked open.
  std::optional<DetectionEvent> finish();

 private:
  std::size_t debounce_;
  std::vector<FlagRecord> pending_;  // current oscillation run while idle
  std::optional<DetectionEvent> current_;
  std::vector<std::size_t> class_votes_;
  std::size_t normal_run_ = 0;
  double last_osc_end_ = 0.0;

  void absorb(const FlagRecord& flag);
  DetectionEvent close();
};

std::vector<DetectionEvent> coalesce_events(const std::vector<FlagRecord>& flags, std::size_t debounce = 3);

// "t_epoch_s,flag,probability"
std::string format_flag(const FlagRecord& flag);
std::optional<FlagRecord> parse_flag(std::string_view line);
// "start,end,duration_s,peak_prob"
std::string format_event(const DetectionEvent& event);

}  // namespace oscdet
