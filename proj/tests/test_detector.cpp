#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oscdet/detector.hpp"
#include "oscdet/error.hpp"
#include "oscdet/models.hpp"

using namespace oscdet;

namespace {

std::vector<FlagRecord> flags_from(const std::vector<int>& bits, double t0 = 100.0) {
  std::vector<FlagRecord> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    FlagRecord f;
    f.t_epoch_s = t0 + static_cast<double>(i);
    f.t_end_epoch_s = f.t_epoch_s + 1.0;
    f.flag = bits[i];
    f.probability = bits[i] == kFlagOscillation ? 0.9 : 0.1;
    out.push_back(f);
  }
  return out;
}

TimeSeries noisy_series(std::size_t n, std::uint64_t seed) {
  SignalConfig cfg;
  cfg.duration_s = static_cast<double>(n) / 30.0;
  cfg.osc_on_s = 0.25 * cfg.duration_s;
  cfg.osc_off_s = 0.75 * cfg.duration_s;
  cfg.seed = seed;
  return generate_series(cfg);
}

}  // namespace

TEST_CASE("stream needs a full window before flagging") {
  const auto model = initialize_model(build_conv1d_spec(), 1);
  StreamState s(model);
  for (int i = 0; i < 29; ++i) {
    CHECK(s.push_sample(1000.0 + i / 30.0, 60.0 + 0.001 * i));
    CHECK_FALSE(s.step().has_value());
  }
  CHECK(s.push_sample(1000.0 + 29 / 30.0, 60.0));
  const auto flag = s.step();
  REQUIRE(flag.has_value());
  CHECK(flag->t_epoch_s == 1000.0);
  CHECK(flag->t_end_epoch_s == 1001.0);
  CHECK(s.buffered() == 0);
}

TEST_CASE("stream rejects bad samples and resets on gaps") {
  const auto model = initialize_model(build_conv1d_spec(), 1);
  StreamState s(model);
  for (int i = 0; i < 20; ++i) s.push_sample(1000.0 + i / 30.0, 60.0);
  CHECK_FALSE(s.push_sample(1000.0, 60.0));
  CHECK_FALSE(s.push_sample(1001.0, std::numeric_limits<double>::quiet_NaN()));
  CHECK_FALSE(s.push_sample(std::numeric_limits<double>::infinity(), 60.0));
  CHECK(s.rejected_out_of_order() == 1);
  CHECK(s.rejected_non_finite() == 2);
  CHECK(s.buffered() == 20);

  CHECK(s.push_sample(1010.0, 60.0));
  CHECK(s.resets() == 1);
  CHECK(s.buffered() == 1);

  CHECK_THROWS_AS(StreamState(model, StreamConfig{30.0, 2.0}), ConfigError);
}

TEST_CASE("stream buffer stays bounded") {
  const auto model = initialize_model(build_conv1d_spec(), 2);
  for (double stride : {0.5, 1.0, 2.0}) {
    StreamConfig cfg;
    cfg.stride_s = stride;
    StreamState s(model, cfg);
    const auto stride_n = static_cast<std::size_t>(std::llround(stride * 30.0));
    std::mt19937_64 rng(3);
    std::bernoulli_distribution call_step(0.3);
    for (int i = 0; i < 3000; ++i) {
      s.push_sample(1000.0 + i / 30.0, 60.0 + 1e-3 * std::sin(i * 0.3));
      CHECK(s.buffered() <= s.window_size() + stride_n);
      if (call_step(rng)) s.step();
    }
  }
}

TEST_CASE("streaming matches batch slicing") {
  const auto model = initialize_model(build_conv1d_spec(), 4);
  const auto ts = noisy_series(1800, 5);
  for (double stride : {1.0, 0.5, 1.5}) {
    StreamConfig cfg;
    cfg.stride_s = stride;
    StreamState s(model, cfg);
    std::vector<FlagRecord> streamed;
    for (Eigen::Index i = 0; i < ts.values.size(); ++i) {
      s.push_sample(ts.t0_epoch_s + ts.time_at(i), ts.values[i]);
      while (auto f = s.step()) streamed.push_back(*f);
    }
    SliceOptions opt;
    opt.stride_s = stride;
    const auto batch = classify_windows(model, slice_windows(ts, opt));
    REQUIRE(streamed.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(streamed[i].t_epoch_s == doctest::Approx(batch[i].t_epoch_s).epsilon(1e-12));
      CHECK(streamed[i].flag == batch[i].flag);
      CHECK(streamed[i].probability == batch[i].probability);
    }
  }
}

TEST_CASE("debounce example") {
  const auto events = coalesce_events(flags_from({1, 1, 0, 0, 0, 0, 1, 1, 1, 0}), 3);
  REQUIRE(events.size() == 1);
  CHECK(events[0].start_epoch_s == 102.0);
  CHECK(events[0].end_epoch_s == 106.0);
  CHECK(events[0].duration_s() == 4.0);
  CHECK(events[0].window_count == 4);
  CHECK_FALSE(events[0].open);
  CHECK(events[0].peak_probability == 0.9);
}

TEST_CASE("short runs and all-normal streams raise nothing") {
  CHECK(coalesce_events(flags_from(std::vector<int>(500, kFlagNormal)), 3).empty());
  CHECK(coalesce_events(flags_from({0, 0, 1, 0, 0, 1, 0, 1}), 3).empty());
  CHECK(coalesce_events({}, 3).empty());
  CHECK_THROWS_AS(EventCoalescer(0), ConfigError);
}

TEST_CASE("events are backdated and left open at the end") {
  const auto events = coalesce_events(flags_from({1, 0, 0, 0, 1, 0, 1, 0, 0}), 3);
  REQUIRE(events.size() == 1);
  CHECK(events[0].start_epoch_s == 101.0);
  CHECK(events[0].end_epoch_s == 109.0);
  CHECK(events[0].open);
  CHECK(events[0].window_count == 6);

  // A normal run shorter than the debounce does not split an event.
  const auto merged = coalesce_events(flags_from({0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1}), 3);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].end_epoch_s == 108.0);
  CHECK_FALSE(merged[0].open);
}

TEST_CASE("incremental and batch coalescing agree") {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution osc(0.45);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> bits(200);
    for (auto& b : bits) b = osc(rng) ? kFlagOscillation : kFlagNormal;
    const auto flags = flags_from(bits);
    for (std::size_t d : {1, 2, 3, 5}) {
      EventCoalescer c(d);
      std::vector<DetectionEvent> live;
      for (const auto& f : flags)
        if (auto e = c.push(f)) live.push_back(*e);
      if (auto e = c.finish()) live.push_back(*e);
      const auto batch = coalesce_events(flags, d);
      REQUIRE(live.size() == batch.size());

      for (std::size_t i = 0; i < batch.size(); ++i) {
        CHECK(live[i].start_epoch_s == batch[i].start_epoch_s);
        CHECK(batch[i].start_epoch_s < batch[i].end_epoch_s);
        CHECK(batch[i].window_count >= d);
        if (i > 0) CHECK(batch[i - 1].end_epoch_s < batch[i].start_epoch_s);
      }
    }
    // More debounce never produces more events.
    std::size_t prev = coalesce_events(flags, 1).size();
    for (std::size_t d = 2; d <= 6; ++d) {
      const std::size_t n = coalesce_events(flags, d).size();
      CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("flag lines round trip") {
  FlagRecord f;
  f.t_epoch_s = 1577836920.0;
  f.flag = kFlagOscillation;
  f.probability = 0.8125;
  const auto line = format_flag(f);
  const auto back = parse_flag(line);
  REQUIRE(back.has_value());
  CHECK(back->t_epoch_s == doctest::Approx(f.t_epoch_s).epsilon(1e-15));
  CHECK(back->flag == f.flag);
  CHECK(back->probability == doctest::Approx(f.probability));
  CHECK_FALSE(parse_flag("garbage").has_value());
  CHECK_FALSE(parse_flag("").has_value());
}
