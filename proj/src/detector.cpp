#include "oscdet/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "oscdet/error.hpp"

namespace oscdet {

StreamState::StreamState(const TrainedModel& model, StreamConfig config)
    : model_(&model),
      config_(config),
      width_(static_cast<std::size_t>(std::llround(config.window_s * config.sample_rate_hz))),
      stride_(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.stride_s * config.sample_rate_hz)))) {
  if (!(config.sample_rate_hz > 0.0)) throw ConfigError("stream sample rate must be positive");
  if (width_ != static_cast<std::size_t>(model.spec().input_len))
    throw ConfigError("stream window of " + std::to_string(width_) + " samples does not match model input " +
                      std::to_string(model.spec().input_len));
}

bool StreamState::push_sample(double t, double f) {
  if (!std::isfinite(f) || !std::isfinite(t)) {
    ++rejected_non_finite_;
    return false;
  }
  if (last_t_ && t <= *last_t_) {
    ++rejected_order_;
    return false;
  }
  if (last_t_ && t - *last_t_ > config_.gap_reset_periods / config_.sample_rate_hz) {
    buffer_.clear();
    skip_ = 0;
    ++resets_;
  }
  last_t_ = t;
  if (skip_ > 0) {
    --skip_;
    return true;
  }
  buffer_.push_back({t, f});
  while (buffer_.size() > width_ + stride_) buffer_.pop_front();
  return true;
}

std::optional<FlagRecord> StreamState::step() {
  if (buffer_.size() < width_) return std::nullopt;
  std::vector<double> raw(width_);
  for (std::size_t i = 0; i < width_; ++i) raw[i] = buffer_[i].f;
  Window w;
  w.samples = normalize_window(raw, config_.normalization);
  w.t_start_epoch_s = buffer_.front().t;
  const std::size_t drop = std::min(stride_, buffer_.size());
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(drop));
  skip_ = stride_ - drop;
  return classify_window(*model_, w, config_.window_s);
}

FlagRecord classify_window(const TrainedModel& model, const Window& window, double window_s) {
  const Eigen::VectorXd probs = model.predict_proba(window);
  FlagRecord rec;
  rec.t_epoch_s = window.t_start_epoch_s;
  rec.t_end_epoch_s = window.t_start_epoch_s + window_s;
  rec.flag = is_oscillation(probs, model.n_classes()) ? kFlagOscillation : kFlagNormal;
  rec.probability = oscillation_probability(probs, model.n_classes());
  if (model.n_classes() > 2) {
    Eigen::Index best;
    probs.maxCoeff(&best);
    rec.frequency_class = static_cast<int>(best);
  }
  return rec;
}

std::vector<FlagRecord> classify_windows(const TrainedModel& model, const std::vector<Window>& windows,
                                         double window_s) {
  std::vector<FlagRecord> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(classify_window(model, w, window_s));
  return out;
}

EventCoalescer::EventCoalescer(std::size_t debounce) : debounce_(debounce) {
  if (debounce_ == 0) throw ConfigError("debounce must be >= 1");
}

void EventCoalescer::absorb(const FlagRecord& f) {
  auto& e = *current_;
  ++e.window_count;
  e.peak_probability = std::max(e.peak_probability, f.probability);
  last_osc_end_ = f.t_end_epoch_s;
  if (f.frequency_class > 0) {
    if (class_votes_.size() <= static_cast<std::size_t>(f.frequency_class))
      class_votes_.resize(static_cast<std::size_t>(f.frequency_class) + 1, 0);
    ++class_votes_[static_cast<std::size_t>(f.frequency_class)];
  }
}

DetectionEvent EventCoalescer::close() {
  DetectionEvent e = *current_;
  e.end_epoch_s = last_osc_end_;
  if (!class_votes_.empty()) {
    const auto it = std::max_element(class_votes_.begin(), class_votes_.end());
    if (*it > 0) e.dominant_frequency_class = static_cast<int>(it - class_votes_.begin());
  }
  current_.reset();
  class_votes_.clear();
  normal_run_ = 0;
  return e;
}

std::optional<DetectionEvent> EventCoalescer::push(const FlagRecord& f) {
  const bool osc = f.flag == kFlagOscillation;
  if (!current_) {
    if (!osc) {
      pending_.clear();
      return std::nullopt;
    }
    pending_.push_back(f);
    if (pending_.size() >= debounce_) {
      current_ = DetectionEvent{};
      current_->start_epoch_s = pending_.front().t_epoch_s;
      for (const auto& p : pending_) absorb(p);
      pending_.clear();
    }
    return std::nullopt;
  }
  if (osc) {
    normal_run_ = 0;
    absorb(f);
    return std::nullopt;
  }
  if (++normal_run_ >= debounce_) return close();
  return std::nullopt;
}

std::optional<DetectionEvent> EventCoalescer::finish() {
  pending_.clear();
  if (!current_) return std::nullopt;
  DetectionEvent e = close();
  e.open = true;
  return e;
}

std::vector<DetectionEvent> coalesce_events(const std::vector<FlagRecord>& flags, std::size_t debounce) {
  EventCoalescer c(debounce);
  std::vector<DetectionEvent> out;
  for (const auto& f : flags)
    if (auto e = c.push(f)) out.push_back(*e);
  if (auto e = c.finish()) out.push_back(*e);
  return out;
}

std::string format_flag(const FlagRecord& f) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f,%d,%.6f", f.t_epoch_s, f.flag, f.probability);
  return buf;
}

std::optional<FlagRecord> parse_flag(std::string_view line) {
  FlagRecord f;
  const auto c1 = line.find(',');
  if (c1 == std::string_view::npos) return std::nullopt;
  const auto c2 = line.find(',', c1 + 1);
  if (c2 == std::string_view::npos) return std::nullopt;
  auto num = [](std::string_view s, auto& out) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
  };
  if (!num(line.substr(0, c1), f.t_epoch_s) || !num(line.substr(c1 + 1, c2 - c1 - 1), f.flag) ||
      !num(line.substr(c2 + 1), f.probability))
    return std::nullopt;
  if (f.flag != kFlagOscillation && f.flag != kFlagNormal) return std::nullopt;
  return f;
}

std::string format_event(const DetectionEvent& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.3f,%.6f", e.start_epoch_s, e.end_epoch_s, e.duration_s(),
                e.peak_probability);
  return buf;
}

}  // namespace oscdet
