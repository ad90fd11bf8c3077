#include <doctest.h>

#include <random>

#include "oscdet/detector.hpp"
#include "oscdet/error.hpp"
#include "oscdet/metrics.hpp"

using namespace oscdet;

TEST_CASE("metrics on a balanced run") {
  std::vector<int> truth(240, kFlagNormal), pred;
  for (int i = 120; i < 240; ++i) truth[i] = kFlagOscillation;
  pred = truth;
  for (int i = 120; i < 126; ++i) pred[i] = kFlagNormal;
  const auto r = compute_metrics(pred, truth);
  CHECK(r.n_samples == 240);
  CHECK(r.false_positives == 0);
  CHECK(r.missed_events == 6);
  CHECK(r.true_positives == 114);
  CHECK(r.true_negatives == 120);
  CHECK(r.accuracy == doctest::Approx(0.975));

  CHECK(compute_metrics(truth, truth).accuracy == 1.0);
  const auto lazy = compute_metrics(std::vector<int>(240, kFlagNormal), truth);
  CHECK(lazy.accuracy == 0.5);
  CHECK(lazy.missed_events == 120);
}

TEST_CASE("metric counts partition the samples") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 200; ++i) {
    std::vector<int> p(1 + i), t(1 + i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] = coin(rng);
      t[j] = coin(rng);
    }
    const auto r = compute_metrics(p, t);
    CHECK(r.true_positives + r.false_positives + r.missed_events + r.true_negatives == r.n_samples);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(r.true_positives + r.true_negatives) / r.n_samples));
  }
}

TEST_CASE("metric input errors") {
  CHECK_THROWS_AS(compute_metrics({0, 1}, {0}), DataError);
}

TEST_CASE("report formats") {
  const auto r = compute_metrics({0, 1, 0, 1}, {0, 1, 1, 1});
  const auto rec = format_report_records(r);
  CHECK(rec.find("n_samples=4") != std::string::npos);
  CHECK(rec.find("false_positives=1") != std::string::npos);
  CHECK(format_report_text(r).find("0.75") != std::string::npos);
}

TEST_CASE("latency summary statistics") {
  const auto r = summarize_latency({4, 1, 3, 2, 100}, "test");
  CHECK(r.n_predictions == 5);
  CHECK(r.mean_s == 22.0);
  CHECK(r.median_s == 3.0);
  CHECK(r.p99_s == 100.0);
  CHECK(summarize_latency({1, 2, 3, 4}, "").median_s == 2.5);

  std::mt19937_64 rng(2);
  std::exponential_distribution<double> d(1e4);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s(10 + i * 7);
    for (auto& v : s) v = d(rng);
    const auto q = summarize_latency(s, "");
    CHECK(q.median_s <= q.p99_s);
  }
}

TEST_CASE("benchmark honours its options") {
  const auto model = initialize_model(build_dense_spec(), 1);
  BenchOptions opt;
  opt.n = 37;
  opt.warmup = 3;
  const auto r = bench_latency(model, opt);
  CHECK(r.n_predictions == 37);
  CHECK(r.samples_s.size() == 37);
  CHECK(r.median_s <= r.p99_s);
  CHECK(r.mean_s > 0.0);
  CHECK_FALSE(r.hardware.empty());

  opt.end_to_end = true;
  CHECK(bench_latency(model, opt).n_predictions == 37);
  opt.n = 0;
  CHECK_THROWS_AS(bench_latency(model, opt), ConfigError);
}
