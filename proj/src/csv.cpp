#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "oscdet/data.hpp"
#include "oscdet/error.hpp"

namespace oscdet {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string> split_header(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.emplace_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

// Field `index` of a comma-separated line without materializing the others.
std::optional<std::string_view> field(std::string_view line, std::size_t index) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < index; ++i) {
    pos = line.find(',', pos);
    if (pos == std::string_view::npos) return std::nullopt;
    ++pos;
  }
  const auto end = line.find(',', pos);
  return line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

double parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  text = trim(text);
  auto bad = [&] { return DataError("unparseable ISO-8601 timestamp '" + std::string(text) + "'"); };
  // YYYY-MM-DDTHH:MM:SS[.fff][Z|+00:00]
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':')
    throw bad();
  int y, mo, d, h, mi, s;
  if (!parse_number(text.substr(0, 4), y) || !parse_number(text.substr(5, 2), mo) ||
      !parse_number(text.substr(8, 2), d) || !parse_number(text.substr(11, 2), h) ||
      !parse_number(text.substr(14, 2), mi) || !parse_number(text.substr(17, 2), s))
    throw bad();
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw bad();

  std::string_view rest = text.substr(19);
  double frac = 0.0;
  if (!rest.empty() && rest.front() == '.') {
    std::size_t n = 1;
    while (n < rest.size() && rest[n] >= '0' && rest[n] <= '9') ++n;
    if (n == 1) throw bad();
    std::string digits = "0" + std::string(rest.substr(0, n));
    if (!parse_number(std::string_view(digits), frac)) throw bad();
    rest.remove_prefix(n);
  }
  if (!(rest.empty() || rest == "Z" || rest == "+00:00")) throw bad();

  const auto days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days_since) * 86400.0 + h * 3600.0 + mi * 60.0 + s + frac;
}

std::string format_iso8601(double epoch_s) {
  using namespace std::chrono;
  auto micros = static_cast<long long>(std::llround(epoch_s * 1e6));
  long long secs = micros / 1'000'000;
  long long us = micros % 1'000'000;
  if (us < 0) {
    us += 1'000'000;
    --secs;
  }
  const auto day_count = static_cast<int>(std::floor(static_cast<double>(secs) / 86400.0));
  long long sod = secs - static_cast<long long>(day_count) * 86400;
  const year_month_day ymd{sys_days{days{day_count}}};
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%06lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), sod / 3600, (sod / 60) % 60,
                sod % 60, us);
  return buf;
}

std::vector<std::string> list_terminals(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string header;
  if (!std::getline(in, header)) throw DataError(path.string() + ": empty file");
  auto names = split_header(header);
  if (names.empty() || names.front() != "timestamp")
    throw DataError(path.string() + ": unparseable header (first column must be 'timestamp')");
  names.erase(names.begin());
  return names;
}

TerminalRecord ingest_pmu_csv(const std::filesystem::path& path, const std::string& terminal,
                              std::optional<double> sample_rate_hz) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto names = split_header(line);
  if (names.empty() || names.front() != "timestamp")
    throw DataError(path.string() + ": unparseable header (first column must be 'timestamp')");
  const auto it = std::find(names.begin() + 1, names.end(), terminal);
  if (it == names.end()) {
    std::string avail;
    for (std::size_t i = 1; i < names.size(); ++i) avail += (i > 1 ? ", " : "") + names[i];
    throw DataError(path.string() + ": no terminal '" + terminal + "' (available: " + avail + ")");
  }
  const auto column = static_cast<std::size_t>(it - names.begin());

  TerminalRecord rec;
  rec.terminal_id = terminal;
  while (std::getline(in, line)) {
    const std::string_view row(line);
    if (trim(row).empty()) continue;
    const auto ts_field = field(row, 0);
    const auto value_field = field(row, column);
    double value;
    if (!ts_field || !value_field || !parse_number(*value_field, value) || !std::isfinite(value)) {
      ++rec.skipped_rows;
      continue;
    }
    double t;
    try {
      t = parse_iso8601(*ts_field);
    } catch (const DataError&) {
      ++rec.skipped_rows;
      continue;
    }
    if (!rec.timestamps.empty() && t <= rec.timestamps.back()) {
      ++rec.skipped_rows;
      continue;
    }
    rec.timestamps.push_back(t);
    rec.values.push_back(value);
  }

  if (sample_rate_hz) {
    if (!(*sample_rate_hz > 0.0)) throw ConfigError("sample rate must be positive");
    rec.sample_rate_hz = *sample_rate_hz;
  } else if (rec.timestamps.size() >= 2) {
    std::vector<double> diffs;
    for (std::size_t i = 1; i < rec.timestamps.size() && diffs.size() < 1000; ++i)
      diffs.push_back(rec.timestamps[i] - rec.timestamps[i - 1]);
    std::nth_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(diffs.size() / 2), diffs.end());
    const double period = diffs[diffs.size() / 2];
    // Round to a whole number of samples per second when close.
    const double rate = 1.0 / period;
    rec.sample_rate_hz = std::abs(rate - std::round(rate)) < 0.01 ? std::round(rate) : rate;
  }

  const double period = 1.0 / rec.sample_rate_hz;
  for (std::size_t i = 1; i < rec.timestamps.size(); ++i)
    if (rec.timestamps[i] - rec.timestamps[i - 1] > 1.5 * period)
      rec.gaps.push_back({rec.timestamps[i - 1], rec.timestamps[i]});
  return rec;
}

void write_pmu_csv(const std::filesystem::path& path, const TimeSeries& series, const std::string& terminal_id) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  std::fprintf(f, "timestamp,%s\n", terminal_id.c_str());
  for (Eigen::Index i = 0; i < series.values.size(); ++i) {
    const double t = series.t0_epoch_s + static_cast<double>(i) / series.sample_rate_hz;
    std::fprintf(f, "%s,%.10f\n", format_iso8601(t).c_str(), series.values[i]);
  }
  if (std::fclose(f) != 0) throw DataError("failed writing " + path.string());
}

void write_annotations(const std::filesystem::path& path, const std::vector<EventAnnotation>& annotations) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write " + path.string());
  for (const auto& a : annotations) std::fprintf(f, "%.6f,%.6f,%.6f,oscillation\n", a.start_s, a.end_s, a.osc_frequency_hz);
  if (std::fclose(f) != 0) throw DataError("failed writing " + path.string());
}

std::vector<EventAnnotation> read_annotations(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<EventAnnotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = trim(line);
    if (row.empty() || row.front() == '#' || row.starts_with("start_s")) continue;
    EventAnnotation a;
    const auto f0 = field(row, 0), f1 = field(row, 1), f2 = field(row, 2), f3 = field(row, 3);
    if (!f0 || !f1 || !f2 || !parse_number(*f0, a.start_s) || !parse_number(*f1, a.end_s) ||
        !parse_number(*f2, a.osc_frequency_hz) || (f3 && trim(*f3) != "oscillation") || !(a.start_s < a.end_s))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed annotation");
    out.push_back(a);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].start_s < out[i - 1].end_s) throw DataError(path.string() + ": overlapping annotations");
  return out;
}

LabeledDataset load_labeled_directory(const std::filesystem::path& dir, const SliceOptions& options) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  if (files.empty()) throw DataError("no .csv traces in " + dir.string());
  std::sort(files.begin(), files.end());

  LabeledDataset out;
  for (const auto& file : files) {
    const auto terminals = list_terminals(file);
    if (terminals.empty()) throw DataError(file.string() + ": no terminal columns");
    const TerminalRecord record = ingest_pmu_csv(file, terminals.front());
    if (record.size() == 0) continue;
    auto sidecar = file;
    sidecar.replace_extension(".events");
    const auto annotations = std::filesystem::exists(sidecar) ? read_annotations(sidecar) : std::vector<EventAnnotation>{};
    auto windows = slice_windows(record, options);
    label_windows(windows, record.timestamps.front(), options.window_s, annotations);
    std::move(windows.begin(), windows.end(), std::back_inserter(out.windows));
  }
  return out;
}

}  // namespace oscdet
