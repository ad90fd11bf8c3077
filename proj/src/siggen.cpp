#include "oscdet/siggen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "oscdet/error.hpp"
#include "oscdet/rng.hpp"

namespace oscdet {

namespace {

constexpr double kPi = std::numbers::pi;

double ramp_fraction(const Ramp& r, double t) {
  if (t <= r.start_s) return 0.0;
  if (t >= r.end_s) return 1.0;
  return (t - r.start_s) / (r.end_s - r.start_s);
}

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ConfigError(std::string("invalid SignalConfig.") + field + ": " + why);
}

}  // namespace

BiquadCoefficients BiquadCoefficients::low_pass(const SecondOrderParams& p, double fs) {
  if (!(p.natural_frequency_hz > 0.0) || !(p.natural_frequency_hz < fs / 2.0))
    throw ConfigError("second-order filter natural frequency must lie in (0, sample_rate/2)");
  if (!(p.damping_ratio > 0.0)) throw ConfigError("second-order filter damping ratio must be positive");
  if (!(p.dc_gain > 0.0)) throw ConfigError("second-order filter dc gain must be positive");

  // s = 2 fs (1 - z^-1) / (1 + z^-1) with wn prewarped so the digital and
  // analog corners coincide; w = tan(pi fn / fs) is the prewarped wn / (2 fs).
  const double w = std::tan(kPi * p.natural_frequency_hz / fs);
  const double zw = 2.0 * p.damping_ratio * w;
  const double a0 = 1.0 + zw + w * w;
  BiquadCoefficients c;
  c.b0 = p.dc_gain * w * w / a0;
  c.b1 = 2.0 * c.b0;
  c.b2 = c.b0;
  c.a1 = (2.0 * w * w - 2.0) / a0;
  c.a2 = (1.0 - zw + w * w) / a0;
  return c;
}

std::array<std::complex<double>, 2> BiquadCoefficients::poles() const {
  const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2));
  return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
}

bool BiquadCoefficients::stable() const {
  const auto p = poles();
  return std::abs(p[0]) < 1.0 && std::abs(p[1]) < 1.0;
}

std::complex<double> BiquadCoefficients::response(double freq_hz, double fs) const {
  const std::complex<double> zi = std::polar(1.0, -2.0 * kPi * freq_hz / fs);
  return (b0 + b1 * zi + b2 * zi * zi) / (1.0 + a1 * zi + a2 * zi * zi);
}

double BiquadCoefficients::noise_gain() const {
  BiquadState s{*this};
  double energy = 0.0;
  double x = 1.0;
  for (int n = 0; n < 1'000'000; ++n) {
    auto out = biquad_step(s, x);
    s = out.state;
    x = 0.0;
    energy += out.y * out.y;
    if (n > 16 && std::abs(s.z1) + std::abs(s.z2) < 1e-18) break;
  }
  return std::sqrt(energy);
}

BiquadOutput biquad_step(BiquadState state, double x) {
  const auto& c = state.coeffs;
  const double y = c.b0 * x + state.z1;
  state.z1 = c.b1 * x - c.a1 * y + state.z2;
  state.z2 = c.b2 * x - c.a2 * y;
  return {state, y};
}

std::size_t SignalConfig::sample_count() const {
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

void validate(const SignalConfig& c) {
  require(c.sample_rate_hz > 0.0 && std::isfinite(c.sample_rate_hz), "sample_rate_hz", "must be positive");
  require(c.duration_s > 0.0 && std::isfinite(c.duration_s), "duration_s", "must be positive");
  require(c.sample_count() >= 1, "duration_s", "shorter than one sample");
  require(std::isfinite(c.base_frequency_hz), "base_frequency_hz", "must be finite");
  require(c.noise_sigma >= 0.0 && std::isfinite(c.noise_sigma), "noise_sigma", "must be nonnegative");
  require(c.osc_amplitude >= 0.0 && std::isfinite(c.osc_amplitude), "osc_amplitude", "must be nonnegative");
  require(c.osc_frequency_hz > 0.0, "osc_frequency_hz", "must be positive");
  require(c.osc_frequency_hz <= c.max_osc_frequency_hz(), "osc_frequency_hz",
          std::to_string(c.osc_frequency_hz) + " Hz exceeds the Nyquist margin (max " +
              std::to_string(c.max_osc_frequency_hz()) + " Hz at " + std::to_string(c.sample_rate_hz) + " sps)");
  require(c.osc_on_s >= 0.0, "osc_on_s", "must be >= 0");
  require(c.osc_on_s < c.osc_off_s, "osc_off_s", "must be greater than osc_on_s");
  require(c.osc_off_s <= c.duration_s, "osc_off_s", "must not exceed duration_s");
  require(c.ramp_up.start_s <= c.ramp_up.end_s, "ramp_up", "start after end");
  require(c.ramp_down.start_s <= c.ramp_down.end_s, "ramp_down", "start after end");
  require(c.pulse.start_s <= c.pulse.end_s, "pulse", "start after end");
  try {
    (void)BiquadCoefficients::low_pass(c.filter, c.sample_rate_hz);
  } catch (const ConfigError& e) {
    require(false, "filter", e.what());
  }
}

double envelope_at(const SignalConfig& c, double t) {
  double env = c.ramp_up.gain * ramp_fraction(c.ramp_up, t) - c.ramp_down.gain * ramp_fraction(c.ramp_down, t);
  if (t >= c.pulse.start_s && t < c.pulse.end_s) env += c.pulse.amplitude;
  return env;
}

TimeSeries generate_series(const SignalConfig& config) {
  validate(config);
  const std::size_t n = config.sample_count();
  TimeSeries ts;
  ts.t0_epoch_s = config.start_epoch_s;
  ts.sample_rate_hz = config.sample_rate_hz;
  ts.values.resize(static_cast<Eigen::Index>(n));

  Rng rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  BiquadState filter{BiquadCoefficients::low_pass(config.filter, config.sample_rate_hz)};
  const double w = 2.0 * kPi * config.osc_frequency_hz;

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / config.sample_rate_hz;
    // Always draw, so the noise sequence does not depend on sigma.
    double x = config.noise_sigma * noise(rng);
    if (config.osc_amplitude > 0.0 && t >= config.osc_on_s && t < config.osc_off_s)
      x += config.osc_amplitude * std::sin(w * t);
    auto out = biquad_step(filter, envelope_at(config, t) * x);
    filter = out.state;
    ts.values[static_cast<Eigen::Index>(i)] = out.y + config.base_frequency_hz;
  }

  if (config.osc_amplitude > 0.0)
    ts.annotations.push_back({config.osc_on_s, config.osc_off_s, config.osc_frequency_hz, EventKind::oscillation});
  return ts;
}

SignalConfig sweep_trace_config(const SignalConfig& base, const std::vector<double>& freqs, std::size_t n_per_class,
                                std::size_t index, const SweepOptions& options) {
  if (freqs.empty() || n_per_class == 0) throw ConfigError("sweep needs at least one frequency and one trace each");
  if (index >= freqs.size() * n_per_class) throw ConfigError("sweep trace index out of range");
  if (!(options.snr_min > 0.0) || options.snr_max < options.snr_min)
    throw ConfigError("sweep SNR range must satisfy 0 < snr_min <= snr_max");

  const std::size_t fi = index / n_per_class;
  SignalConfig cfg = base;
  cfg.osc_frequency_hz = freqs[fi];

  // Placement is shared by all replicas of one frequency.
  Rng placement = make_rng(base.seed, {0x706c6163, fi});
  const double d = base.duration_s;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  cfg.osc_on_s = std::round(d * (0.15 + 0.2 * u01(placement)) * base.sample_rate_hz) / base.sample_rate_hz;
  cfg.osc_off_s = std::min(d, cfg.osc_on_s + std::round(d * (0.4 + 0.2 * u01(placement))));

  Rng rng = make_rng(base.seed, {0x74726163, index});
  cfg.seed = rng();

  const auto coeffs = BiquadCoefficients::low_pass(cfg.filter, cfg.sample_rate_hz);
  const double sigma = options.reference_sigma.value_or(cfg.noise_sigma);
  const double snr = options.snr_min + (options.snr_max - options.snr_min) * u01(rng);
  const double gain_at_f = std::abs(coeffs.response(cfg.osc_frequency_hz, cfg.sample_rate_hz));
  cfg.osc_amplitude = snr * sigma * coeffs.noise_gain() / gain_at_f;

  cfg.pulse = {0.0, d, 1.0};
  const double up = options.randomize_envelope ? 0.2 + 0.6 * u01(rng) : 0.5;
  const double down = options.randomize_envelope ? 0.2 + 0.6 * u01(rng) : 0.5;
  const double ramp_len = std::max(1.0, 0.05 * d);
  cfg.ramp_up = {std::max(0.0, cfg.osc_on_s - ramp_len), cfg.osc_on_s + ramp_len, up};
  cfg.ramp_down = {cfg.osc_off_s - ramp_len, std::min(d, cfg.osc_off_s + ramp_len), down};
  validate(cfg);
  return cfg;
}

std::vector<TimeSeries> sweep_dataset(const SignalConfig& base, const std::vector<double>& freqs,
                                      std::size_t n_per_class, const SweepOptions& options) {
  if (freqs.empty() || n_per_class == 0) throw ConfigError("sweep needs at least one frequency and one trace each");
  for (double f : freqs) {
    if (f > base.max_osc_frequency_hz() || f <= 0.0)
      throw ConfigError("sweep frequency " + std::to_string(f) + " Hz exceeds the Nyquist margin (max " +
                        std::to_string(base.max_osc_frequency_hz()) + " Hz)");
  }
  std::vector<TimeSeries> out;
  out.reserve(freqs.size() * n_per_class);
  for (std::size_t i = 0; i < freqs.size() * n_per_class; ++i)
    out.push_back(generate_series(sweep_trace_config(base, freqs, n_per_class, i, options)));
  return out;
}

}  // namespace oscdet
