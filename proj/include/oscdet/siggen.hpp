#pragma once

#include <Eigen/Core>

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace oscdet {

// Continuous second-order low-pass prototype K wn^2 / (s^2 + 2 zeta wn s + wn^2).
struct SecondOrderParams {
  double natural_frequency_hz = 12.0;
  double damping_ratio = 0.7;
  double dc_gain = 1.0;
};

// Normalized (a0 = 1) difference-equation coefficients of the bilinear
// discretization, prewarped at the natural frequency.
struct BiquadCoefficients {
  double b0 = 0, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  static BiquadCoefficients low_pass(const SecondOrderParams& params, double sample_rate_hz);

  // Roots of z^2 + a1 z + a2.
  std::array<std::complex<double>, 2> poles() const;
  bool stable() const;
  std::complex<double> response(double freq_hz, double sample_rate_hz) const;
  double dc_response() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
  // sqrt(sum h[n]^2): output std for unit-variance white input.
  double noise_gain() const;
};

// Transposed direct-form II state.
struct BiquadState {
  BiquadCoefficients coeffs;
  double z1 = 0.0;
  double z2 = 0.0;
};

struct BiquadOutput {
  BiquadState state;
  double y;
};

BiquadOutput biquad_step(BiquadState state, double x);

struct Ramp {
  double start_s = 0.0;
  double end_s = 0.0;
  double gain = 0.0;
};

struct Pulse {
  double start_s = 0.0;
  double end_s = 0.0;
  double amplitude = 0.0;
};

struct SignalConfig {
  double sample_rate_hz = 30.0;
  double duration_s = 300.0;
  double start_epoch_s = 1577836800.0;  // 2020-01-01T00:00:00Z
  double base_frequency_hz = 60.0;
  double noise_sigma = 0.002;
  Ramp ramp_up{110.0, 130.0, 0.5};     // adds gain * clamp((t - start) / (end - start))
  Ramp ramp_down{190.0, 210.0, 0.5};   // subtracts gain * clamp((t - start) / (end - start))
  Pulse pulse{0.0, 300.0, 1.0};        // adds amplitude on [start, end)
  double osc_frequency_hz = 3.0;
  double osc_amplitude = 0.01;
  double osc_on_s = 120.0;
  double osc_off_s = 200.0;
  SecondOrderParams filter;
  std::uint64_t seed = 1;

  // Highest admissible oscillation frequency: half the sample rate less 1 Hz.
  double max_osc_frequency_hz() const { return sample_rate_hz / 2.0 - 1.0; }
  std::size_t sample_count() const;
};

// Throws ConfigError naming the first offending field.
void validate(const SignalConfig& config);

double envelope_at(const SignalConfig& config, double t);

enum class EventKind { oscillation };

struct EventAnnotation {
  double start_s = 0.0;  // relative to the first sample
  double end_s = 0.0;
  double osc_frequency_hz = 0.0;
  EventKind kind = EventKind::oscillation;
};

struct TimeSeries {
  double t0_epoch_s = 0.0;
  double sample_rate_hz = 30.0;
  Eigen::VectorXd values;
  std::vector<EventAnnotation> annotations;

  double duration_s() const { return static_cast<double>(values.size()) / sample_rate_hz; }
  double time_at(Eigen::Index n) const { return static_cast<double>(n) / sample_rate_hz; }
};

// y[n] = H(q) (envelope(t_n) (noise_n + gate(t_n) A sin(2 pi f t_n))) + base
TimeSeries generate_series(const SignalConfig& config);

struct SweepOptions {
  // Oscillation amplitude is drawn so that the filtered oscillation
  // amplitude over the filtered noise std is uniform in [snr_min, snr_max].
  double snr_min = 1.0;
  double snr_max = 10.0;
  // Noise level the amplitude rule is referenced to; defaults to the
  // config's own noise_sigma.
  std::optional<double> reference_sigma;
  bool randomize_envelope = true;
};

// n_per_class traces per frequency. Event placement is drawn once per
// frequency; seeds, amplitudes and envelope gains are drawn per trace. Trace
// i is a pure function of (base, i).
std::vector<TimeSeries> sweep_dataset(const SignalConfig& base, const std::vector<double>& freqs,
                                      std::size_t n_per_class, const SweepOptions& options = {});

// The SignalConfig actually used for trace `index` of a sweep.
SignalConfig sweep_trace_config(const SignalConfig& base, const std::vector<double>& freqs, std::size_t n_per_class,
                                std::size_t index, const SweepOptions& options = {});

}  // namespace oscdet
