// oscdet: generate, train, fine-tune, detect, evaluate and benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "oscdet/data.hpp"
#include "oscdet/detector.hpp"
#include "oscdet/error.hpp"
#include "oscdet/metrics.hpp"
#include "oscdet/models.hpp"
#include "oscdet/siggen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace oscdet;

namespace {

enum class Format { text, records };

const std::map<std::string, Format> kFormats{{"text", Format::text}, {"records", Format::records}};

// ---- gen --------------------------------------------------------------------

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_ramp(const json& j, const char* key, Ramp& r) {
  if (!j.contains(key)) return;
  const auto& o = j.at(key);
  read_opt(o, "start_s", r.start_s);
  read_opt(o, "end_s", r.end_s);
  read_opt(o, "gain", r.gain);
}

struct GenConfig {
  SignalConfig signal;
  SweepOptions sweep;
  std::string terminal = "synthetic";
};

GenConfig gen_config_from_json(const json& j) {
  static const std::set<std::string> known{"sample_rate_hz", "duration_s",    "start_epoch_s", "base_frequency_hz",
                                           "noise_sigma",    "ramp_up",       "ramp_down",     "pulse",
                                           "osc_frequency_hz", "osc_amplitude", "osc_on_s",    "osc_off_s",
                                           "filter",         "seed",          "snr_min",       "snr_max",
                                           "reference_sigma", "randomize_envelope", "terminal"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

  GenConfig g;
  auto& c = g.signal;
  read_opt(j, "sample_rate_hz", c.sample_rate_hz);
  read_opt(j, "duration_s", c.duration_s);
  read_opt(j, "start_epoch_s", c.start_epoch_s);
  read_opt(j, "base_frequency_hz", c.base_frequency_hz);
  read_opt(j, "noise_sigma", c.noise_sigma);
  read_ramp(j, "ramp_up", c.ramp_up);
  read_ramp(j, "ramp_down", c.ramp_down);
  if (j.contains("pulse")) {
    const auto& p = j.at("pulse");
    read_opt(p, "start_s", c.pulse.start_s);
    read_opt(p, "end_s", c.pulse.end_s);
    read_opt(p, "amplitude", c.pulse.amplitude);
  }
  read_opt(j, "osc_frequency_hz", c.osc_frequency_hz);
  read_opt(j, "osc_amplitude", c.osc_amplitude);
  read_opt(j, "osc_on_s", c.osc_on_s);
  read_opt(j, "osc_off_s", c.osc_off_s);
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    read_opt(f, "natural_frequency_hz", c.filter.natural_frequency_hz);
    read_opt(f, "damping_ratio", c.filter.damping_ratio);
    read_opt(f, "dc_gain", c.filter.dc_gain);
  }
  read_opt(j, "seed", c.seed);
  read_opt(j, "snr_min", g.sweep.snr_min);
  read_opt(j, "snr_max", g.sweep.snr_max);
  if (j.contains("reference_sigma")) g.sweep.reference_sigma = j.at("reference_sigma").get<double>();
  read_opt(j, "randomize_envelope", g.sweep.randomize_envelope);
  read_opt(j, "terminal", g.terminal);
  validate(c);
  return g;
}

// "lo:hi" or "lo:hi:step", inclusive.
std::vector<double> parse_sweep(const std::string& text) {
  std::vector<double> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = std::min(text.find(':', pos), text.size());
    double v = 0;
    const auto [p, ec] = std::from_chars(text.data() + pos, text.data() + next, v);
    if (ec != std::errc{} || p != text.data() + next) throw ConfigError("bad --sweep '" + text + "', expected lo:hi[:step]");
    parts.push_back(v);
    pos = next + 1;
  }
  if (parts.size() < 2 || parts.size() > 3) throw ConfigError("bad --sweep '" + text + "', expected lo:hi[:step]");
  const double step = parts.size() == 3 ? parts[2] : 1.0;
  if (!(step > 0) || parts[1] < parts[0]) throw ConfigError("bad --sweep '" + text + "'");
  std::vector<double> freqs;
  for (double f = parts[0]; f <= parts[1] + 1e-9; f += step) freqs.push_back(f);
  return freqs;
}

int cmd_gen(const fs::path& config_path, const fs::path& out_dir, const std::string& sweep, std::size_t n_per_class,
            std::optional<std::uint64_t> seed) {
  json j = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw DataError("cannot open config " + config_path.string());
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + config_path.string() + ": " + e.what());
    }
  }
  GenConfig g = gen_config_from_json(j);
  if (seed) g.signal.seed = *seed;
  fs::create_directories(out_dir);

  std::vector<TimeSeries> traces;
  if (sweep.empty())
    traces.push_back(generate_series(g.signal));
  else
    traces = sweep_dataset(g.signal, parse_sweep(sweep), n_per_class, g.sweep);

  for (std::size_t i = 0; i < traces.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "trace_%04zu", i);
    write_pmu_csv(out_dir / (std::string(name) + ".csv"), traces[i], g.terminal);
    write_annotations(out_dir / (std::string(name) + ".events"), traces[i].annotations);
  }
  std::printf("wrote %zu traces to %s\n", traces.size(), out_dir.c_str());
  return 0;
}

// ---- train / finetune -------------------------------------------------------

void print_epoch(Format fmt, const std::string& phase, const EpochRecord& e) {
  if (fmt == Format::records)
    std::printf("phase=%s,epoch=%d,train_loss=%.6f,train_accuracy=%.6f,val_loss=%.6f,val_accuracy=%.6f\n",
                phase.c_str(), e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
  else
    std::printf("%-9s epoch %3d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n", phase.c_str(), e.epoch,
                e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
  std::fflush(stdout);
}

void print_phase_summary(Format fmt, const TrainingPhase& p) {
  if (fmt == Format::records)
    std::printf("phase=%s,best_epoch=%d,n_train=%zu,n_val=%zu,lr=%g,seed=%llu\n", p.name.c_str(), p.best_epoch,
                p.n_train, p.n_val, p.learning_rate, static_cast<unsigned long long>(p.seed));
  else
    std::printf("%s: best epoch %d of %zu (train %zu, val %zu windows)\n", p.name.c_str(), p.best_epoch,
                p.history.size(), p.n_train, p.n_val);
}

LabeledDataset load_training_dir(const fs::path& dir) {
  LabeledDataset ds = load_labeled_directory(dir);
  if (ds.size() == 0) throw DataError("no complete windows in " + dir.string());
  return ds;
}

int cmd_train(const fs::path& data, const std::string& arch, int classes, const fs::path& out, TrainConfig cfg,
              Format fmt) {
  if (arch == "dense" && classes != 2) throw ConfigError("the dense baseline has a 2-class head only");
  const ModelSpec spec = arch == "dense" ? build_dense_spec() : build_conv1d_spec(classes);
  const LabeledDataset ds = load_training_dir(data);
  cfg.on_epoch = [fmt](const EpochRecord& e) { print_epoch(fmt, "train", e); };
  const TrainedModel model = train(spec, ds, cfg);
  save_model(model, out);
  print_phase_summary(fmt, model.meta().phases.back());
  return 0;
}

int cmd_finetune(const fs::path& model_path, const fs::path& data, const fs::path& out, TrainConfig cfg, Format fmt) {
  const TrainedModel base = load_model(model_path);
  const LabeledDataset ds = load_training_dir(data);
  cfg.on_epoch = [fmt](const EpochRecord& e) { print_epoch(fmt, "fine_tune", e); };
  const TrainedModel tuned = fine_tune(base, ds, cfg);
  save_model(tuned, out);
  print_phase_summary(fmt, tuned.meta().phases.back());
  return 0;
}

// ---- detect -----------------------------------------------------------------

struct Sample {
  double t;
  double f;
};

// Single-producer single-consumer handoff with a fixed capacity.
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Sample s) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(s);
    not_empty_.notify_one();
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

  std::optional<Sample> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    const Sample s = items_.front();
    items_.pop_front();
    not_full_.notify_one();
    return s;
  }

 private:
  std::size_t capacity_;
  std::deque<Sample> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

std::optional<std::string_view> nth_field(std::string_view row, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = row.find(',');
    if (c == std::string_view::npos) return std::nullopt;
    row.remove_prefix(c + 1);
  }
  return row.substr(0, row.find(','));
}

std::optional<Sample> parse_row(std::string_view row, std::size_t column) {
  while (!row.empty() && (row.back() == '\r' || row.back() == ' ')) row.remove_suffix(1);
  const auto ts = nth_field(row, 0);
  const auto val = nth_field(row, column);
  if (!ts || !val || val->empty()) return std::nullopt;
  Sample s{};
  const auto [p, ec] = std::from_chars(val->data(), val->data() + val->size(), s.f);
  if (ec != std::errc{} || p != val->data() + val->size()) return std::nullopt;
  try {
    s.t = parse_iso8601(*ts);
  } catch (const DataError&) {
    const auto [q, ec2] = std::from_chars(ts->data(), ts->data() + ts->size(), s.t);
    if (ec2 != std::errc{} || q != ts->data() + ts->size()) return std::nullopt;
  }
  return s;
}

// Tails a growing CSV until no new bytes arrive for `idle_timeout_s`.
void follow_csv(const fs::path& path, const std::string& terminal, double idle_timeout_s, BoundedQueue& queue,
                std::atomic<std::size_t>& skipped, std::string& error) {
  try {
    const auto terminals = list_terminals(path);
    const auto it = std::find(terminals.begin(), terminals.end(), terminal);
    if (it == terminals.end()) throw DataError("terminal '" + terminal + "' not in " + path.string());
    const std::size_t column = static_cast<std::size_t>(it - terminals.begin()) + 1;

    std::ifstream in(path);
    std::string line, partial;
    std::getline(in, line);  // header
    auto last_data = std::chrono::steady_clock::now();
    const auto timeout = std::chrono::duration<double>(idle_timeout_s);
    for (;;) {
      if (std::getline(in, line)) {
        if (in.eof()) {  // no trailing newline yet: keep the fragment
          partial += line;
          in.clear();
          continue;
        }
        line = partial + line;
        partial.clear();
        last_data = std::chrono::steady_clock::now();
        if (line.empty()) continue;
        if (const auto s = parse_row(line, column))
          queue.push(*s);
        else
          ++skipped;
        continue;
      }
      in.clear();
      if (std::chrono::steady_clock::now() - last_data > timeout) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    if (!partial.empty()) {
      if (const auto s = parse_row(partial, column))
        queue.push(*s);
      else
        ++skipped;
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  queue.close();
}

class DetectPrinter {
 public:
  // `live` prints each event as soon as it closes instead of at the end.
  DetectPrinter(Format fmt, std::size_t debounce, bool live) : fmt_(fmt), live_(live), coalescer_(debounce) {
    if (fmt_ == Format::text) std::printf("%-27s %-6s %s\n", "window start (UTC)", "flag", "p_osc");
  }

  void flag(const FlagRecord& f) {
    if (fmt_ == Format::records)
      std::printf("%s\n", format_flag(f).c_str());
    else
      std::printf("%-27s %-6s %.4f\n", format_iso8601(f.t_epoch_s).c_str(),
                  f.flag == kFlagOscillation ? "OSC" : "normal", f.probability);
    if (auto e = coalescer_.push(f)) {
      events_.push_back(*e);
      if (live_) print_event(*e);
    }
  }

  void print_event(const DetectionEvent& e) const {
    if (fmt_ == Format::records)
      std::printf("event,%s%s\n", format_event(e).c_str(), e.open ? ",open" : "");
    else
      std::printf("event  %s .. %s  %7.1f s  peak %.4f%s\n", format_iso8601(e.start_epoch_s).c_str(),
                  format_iso8601(e.end_epoch_s).c_str(), e.duration_s(), e.peak_probability,
                  e.open ? "  (open)" : "");
    std::fflush(stdout);
  }

  void finish(const StreamState& state, std::size_t skipped_rows) {
    const std::size_t printed = live_ ? events_.size() : 0;
    if (auto e = coalescer_.finish()) events_.push_back(*e);
    if (fmt_ == Format::records) {
      for (std::size_t i = printed; i < events_.size(); ++i) print_event(events_[i]);
      std::printf("summary,events=%zu,skipped_rows=%zu,out_of_order=%zu,non_finite=%zu,resets=%zu\n", events_.size(),
                  skipped_rows, state.rejected_out_of_order(), state.rejected_non_finite(), state.resets());
      return;
    }
    std::printf("\n%zu event(s)\n", events_.size());
    for (const auto& e : events_) print_event(e);
    std::printf("skipped rows %zu, out of order %zu, non-finite %zu, gap resets %zu\n", skipped_rows,
                state.rejected_out_of_order(), state.rejected_non_finite(), state.resets());
  }

 private:
  Format fmt_;
  bool live_;
  EventCoalescer coalescer_;
  std::vector<DetectionEvent> events_;
};

int cmd_detect(const fs::path& model_path, const fs::path& csv, const std::string& terminal, bool follow,
               std::size_t debounce, double idle_timeout_s, Format fmt) {
  const TrainedModel model = load_model(model_path);
  StreamState state(model);
  DetectPrinter printer(fmt, debounce, follow);

  if (!follow) {
    const TerminalRecord rec = ingest_pmu_csv(csv, terminal);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      state.push_sample(rec.timestamps[i], rec.values[i]);
      if (auto f = state.step()) printer.flag(*f);
    }
    printer.finish(state, rec.skipped_rows);
    return 0;
  }

  BoundedQueue queue(4096);
  std::atomic<std::size_t> skipped{0};
  std::string producer_error;
  std::thread producer(follow_csv, csv, terminal, idle_timeout_s, std::ref(queue), std::ref(skipped),
                       std::ref(producer_error));
  while (auto s = queue.pop()) {
    state.push_sample(s->t, s->f);
    if (auto f = state.step()) {
      printer.flag(*f);
      std::fflush(stdout);
    }
  }
  producer.join();
  if (!producer_error.empty()) throw DataError(producer_error);
  printer.finish(state, skipped.load());
  return 0;
}

// ---- eval -------------------------------------------------------------------

std::vector<int> flags_from_file(const fs::path& path, const std::vector<Window>& windows, double tolerance_s) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open flags file " + path.string());
  std::vector<FlagRecord> flags;
  std::string line;
  while (std::getline(in, line))
    if (auto f = parse_flag(line)) flags.push_back(*f);
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const auto it = std::lower_bound(flags.begin(), flags.end(), w.t_start_epoch_s - tolerance_s,
                                     [](const FlagRecord& f, double t) { return f.t_epoch_s < t; });
    if (it == flags.end() || std::abs(it->t_epoch_s - w.t_start_epoch_s) > tolerance_s)
      throw DataError("no flag for window at " + format_iso8601(w.t_start_epoch_s) + " in " + path.string());
    out.push_back(it->flag);
  }
  return out;
}

int cmd_eval(const fs::path& model_path, const fs::path& csv, const std::string& terminal,
             const fs::path& annotations_path, double balanced_minutes, const fs::path& flags_path, Format fmt) {
  const TrainedModel model = load_model(model_path);
  const TerminalRecord rec = ingest_pmu_csv(csv, terminal);
  if (rec.size() == 0) throw DataError("no samples for terminal '" + terminal + "' in " + csv.string());
  auto windows = slice_windows(rec);
  label_windows(windows, rec.timestamps.front(), 1.0, read_annotations(annotations_path));
  if (balanced_minutes > 0) windows = balanced_truncate(windows, balanced_minutes).windows;

  std::vector<int> truth;
  truth.reserve(windows.size());
  for (const auto& w : windows) truth.push_back(w.label->cls == WindowClass::oscillation ? kFlagOscillation : kFlagNormal);

  std::vector<int> predictions;
  if (!flags_path.empty()) {
    predictions = flags_from_file(flags_path, windows, 0.5 / rec.sample_rate_hz);
  } else {
    for (const auto& f : classify_windows(model, windows)) predictions.push_back(f.flag);
  }
  const EvalReport report = compute_metrics(predictions, truth);
  std::fputs((fmt == Format::records ? format_report_records(report) : format_report_text(report)).c_str(), stdout);
  return 0;
}

// ---- bench ------------------------------------------------------------------

int cmd_bench(const fs::path& model_path, BenchOptions opt, Format fmt) {
  const TrainedModel model = load_model(model_path);
  const LatencyReport r = bench_latency(model, opt);
  std::fputs((fmt == Format::records ? format_latency_records(r) : format_latency_text(r)).c_str(), stdout);
  return 0;
}

int fail(int code, const std::string& msg) {
  std::fflush(stdout);
  std::fprintf(stderr, "oscdet: error: %s\n", msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forced-oscillation detection on PMU frequency streams"};
  app.require_subcommand(1);

  Format fmt = Format::text;
  auto add_format = [&](CLI::App* sub) {
    sub->add_option("--format", fmt, "text or records")->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case));
  };

  auto* gen = app.add_subcommand("gen", "Generate synthetic PMU traces with annotation sidecars");
  fs::path gen_config, gen_out;
  std::string gen_sweep;
  std::size_t gen_n = 1;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "JSON signal configuration")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--sweep", gen_sweep, "oscillation frequencies lo:hi[:step] in Hz");
  gen->add_option("--n-per-class", gen_n, "traces per frequency")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "base seed");

  TrainConfig tcfg;
  auto add_train_opts = [&](CLI::App* sub) {
    sub->add_option("--epochs", tcfg.epochs)->check(CLI::PositiveNumber);
    sub->add_option("--batch", tcfg.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--lr", tcfg.learning_rate)->check(CLI::PositiveNumber);
    sub->add_option("--val-ratio", tcfg.validation_ratio, "validation:training size ratio")->check(CLI::PositiveNumber);
    sub->add_option("--patience", tcfg.patience, "early-stopping patience, 0 disables")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", tcfg.seed);
    add_format(sub);
  };

  auto* tr = app.add_subcommand("train", "Train a model on a directory of traces");
  fs::path data_dir, out_path, model_path;
  std::string arch = "conv1d";
  int classes = 2;
  tr->add_option("--data", data_dir, "trace directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--arch", arch)->check(CLI::IsMember({"conv1d", "dense"}));
  tr->add_option("--classes", classes)->check(CLI::IsMember({2, 16}));
  tr->add_option("--out", out_path, "model file")->required();
  add_train_opts(tr);

  auto* ft = app.add_subcommand("finetune", "Continue training a model on new traces");
  ft->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  ft->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  ft->add_option("--out", out_path)->required();
  add_train_opts(ft);

  auto* det = app.add_subcommand("detect", "Stream a CSV through a model and report flags and events");
  fs::path csv_path;
  std::string terminal;
  bool follow = false;
  std::size_t debounce = 3;
  double idle_timeout = 5.0;
  det->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  det->add_option("--csv", csv_path)->required()->check(CLI::ExistingFile);
  det->add_option("--terminal", terminal)->required();
  det->add_flag("--follow", follow, "tail the file as it grows");
  det->add_option("--debounce", debounce, "consecutive flags to open or close an event")->check(CLI::PositiveNumber);
  det->add_option("--idle-timeout", idle_timeout, "seconds without new rows before --follow stops")
      ->check(CLI::PositiveNumber);
  add_format(det);

  auto* ev = app.add_subcommand("eval", "Evaluate a model against annotations");
  fs::path annotations_path, flags_path;
  double balanced_minutes = 0.0;
  ev->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--csv", csv_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--terminal", terminal)->required();
  ev->add_option("--annotations", annotations_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--balanced-minutes", balanced_minutes, "truncate to this many minutes per class, 0 keeps all")
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--flags", flags_path, "score flags from `detect --format records` instead of running the model")
      ->check(CLI::ExistingFile);
  add_format(ev);

  auto* be = app.add_subcommand("bench", "Measure inference latency");
  BenchOptions bopt;
  be->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  be->add_option("--n", bopt.n)->check(CLI::PositiveNumber);
  be->add_option("--warmup", bopt.warmup);
  be->add_flag("--end-to-end", bopt.end_to_end, "time push-to-flag through the streaming detector");
  add_format(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(gen_config, gen_out, gen_sweep, gen_n, gen_seed);
    if (*tr) return cmd_train(data_dir, arch, classes, out_path, tcfg, fmt);
    if (*ft) return cmd_finetune(model_path, data_dir, out_path, tcfg, fmt);
    if (*det) return cmd_detect(model_path, csv_path, terminal, follow, debounce, idle_timeout, fmt);
    if (*ev) return cmd_eval(model_path, csv_path, terminal, annotations_path, balanced_minutes, flags_path, fmt);
    if (*be) return cmd_bench(model_path, bopt, fmt);
  } catch (const NumericError& e) {
    return fail(3, e.what());
  } catch (const ConfigError& e) {
    return fail(1, e.what());
  } catch (const json::exception& e) {
    return fail(1, e.what());
  } catch (const Error& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(2, e.what());
  }
  return 1;
}
