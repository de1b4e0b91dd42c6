#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "federation_fixture.hpp"
#include "stashfed/bench.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/error.hpp"
#include "test_util.hpp"

using namespace stashfed;
using namespace stashfed::bench;
using testkit::TempDir;

TEST(Dataset, ScaledSizes) {
  EXPECT_EQ(scaled_size(5'797, 1000), 5u);
  EXPECT_EQ(scaled_size(2'335'000'000ull, 1000), 2'335'000u);
  EXPECT_EQ(scaled_size(5'797, 1'000'000), 1u);
  EXPECT_EQ(scaled_size(10'000'000'000ull, 1), 10'000'000'000ull);
  EXPECT_THROW(scaled_size(1, 0), Error);
  ASSERT_EQ(reference_dataset().size(), 7u);
  EXPECT_EQ(reference_dataset()[5].label, "P95");
  EXPECT_EQ(reference_dataset()[5].unscaled_bytes, 2'335'000'000ull);
}

TEST(Dataset, DeterministicAndIdempotent) {
  TempDir a, b;
  DatasetSpec spec;
  spec.scale = 100'000;
  spec.seed = 7;
  spec.copies = 2;
  auto m1 = generate_dataset(spec, a.path());
  auto m2 = generate_dataset(spec, b.path());
  ASSERT_EQ(m1.files.size(), 14u);
  for (std::size_t i = 0; i < m1.files.size(); ++i) {
    const auto& f = m1.files[i];
    EXPECT_EQ(f.sha256, m2.files[i].sha256);
    auto bytes = testkit::read_file(a / f.relative);
    EXPECT_EQ(bytes, testkit::read_file(b / f.relative));
    EXPECT_EQ(bytes.size(), f.size);
    EXPECT_EQ(to_hex(Sha256::of(bytes)), f.sha256);
    EXPECT_EQ(bytes, file_content(7, f.label, f.copy, f.size));
  }
  EXPECT_EQ(m1.files[0].path.str(), "/exp1/bench/run-7/P1.r0");
  // copies of one label differ
  EXPECT_NE(m1.files[2].sha256, m1.files[3].sha256);

  auto mtime = std::filesystem::last_write_time(a / m1.files[4].relative);
  auto again = generate_dataset(spec, a.path());
  EXPECT_EQ(std::filesystem::last_write_time(a / m1.files[4].relative), mtime);
  EXPECT_EQ(to_json(again), to_json(m1));
}

TEST(Dataset, ManifestRoundTrip) {
  TempDir d;
  DatasetSpec spec;
  spec.scale = 1'000'000;
  spec.copies = 1;
  auto m = generate_dataset(spec, d.path());
  write_manifest(m, d / "manifest.json");
  auto back = read_manifest(d / "manifest.json");
  EXPECT_EQ(to_json(back), to_json(m));
}

TEST(PercentDiff, Examples) {
  EXPECT_NEAR(percent_diff(100, 31.5), -68.5, 1e-12);
  EXPECT_EQ(format_percent(percent_diff(100, 31.5)), "-68.5%");
  EXPECT_EQ(percent_diff(5, 5), 0.0);
  EXPECT_EQ(percent_diff(3, 6), 100.0);
  EXPECT_EQ(format_percent(100.0), "+100.0%");
  EXPECT_EQ(format_percent(0.94), "+0.9%");
  try {
    percent_diff(0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::undefined_baseline);
  }
  EXPECT_THROW(percent_diff(-1, 1), Error);
}

namespace {

BenchResult res(const char* site, const char* label, BenchMethod m, Phase p, double d, std::uint32_t rep = 0) {
  BenchResult r;
  r.site = site;
  r.file_label = label;
  r.method = m;
  r.phase = p;
  r.duration = d;
  r.bytes = 1000;
  r.rep = rep;
  return r;
}

}  // namespace

TEST(Table3, SingleCell) {
  std::vector<BenchResult> rs{res("Bellarmine", "P95", BenchMethod::proxy, Phase::warm, 100),
                              res("Bellarmine", "P95", BenchMethod::federation, Phase::warm, 31.5)};
  auto t = compute_table3(rs, {"P95"});
  ASSERT_EQ(t.sites.size(), 1u);
  EXPECT_NEAR(*t.cell("Bellarmine", "P95"), -68.5, 1e-12);
  EXPECT_NE(table3_markdown(t).find("| Bellarmine | -68.5% |"), std::string::npos);
}

TEST(Table3, MissingPhaseIsAbsentNotZero) {
  std::vector<BenchResult> rs{res("s", "P95", BenchMethod::proxy, Phase::warm, 1),
                              res("s", "XL", BenchMethod::proxy, Phase::warm, 1),
                              res("s", "XL", BenchMethod::federation, Phase::warm, 2)};
  auto failed = res("s", "P95", BenchMethod::federation, Phase::warm, 9);
  failed.ok = false;
  rs.push_back(failed);
  auto t = compute_table3(rs);
  EXPECT_FALSE(t.cell("s", "P95"));
  EXPECT_EQ(*t.cell("s", "XL"), 100.0);
  auto csv = table3_csv(t);
  EXPECT_EQ(csv, "site,P95,XL\ns,n/a,100\n");
  EXPECT_NE(table3_markdown(t).find("| s | n/a | +100.0% |"), std::string::npos);
}

TEST(Table3, CsvRoundTripAndRecompute) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dur(0.001, 10.0);
  std::vector<BenchResult> rs;
  for (auto site : {"A", "B", "C"})
    for (auto label : {"P1", "P50", "P95", "XL"})
      for (std::uint32_t rep = 0; rep < 3; ++rep)
        for (auto m : {BenchMethod::proxy, BenchMethod::federation})
          for (auto p : {Phase::cold, Phase::warm}) rs.push_back(res(site, label, m, p, dur(rng), rep));
  auto t = compute_table3(rs, {});
  auto back = parse_table3_csv(table3_csv(t));
  EXPECT_EQ(back.sites, t.sites);
  EXPECT_EQ(back.labels, t.labels);
  for (const auto& [key, v] : t.cells) {
    EXPECT_EQ(back.cells.at(key), v);
    // recompute from raw durations
    double sp = 0, sf = 0;
    for (const auto& r : rs)
      if (r.site == key.first && r.file_label == key.second && r.phase == Phase::warm)
        (r.method == BenchMethod::proxy ? sp : sf) += r.duration;
    const double expect = (sf / 3 - sp / 3) / (sp / 3) * 100;
    EXPECT_LE(std::fabs(v - expect), 1e-9 * std::max(1.0, std::fabs(expect)));
  }
}

TEST(Report, WritesAllFiles) {
  TempDir out;
  std::vector<BenchResult> rs{res("Site One", "P1", BenchMethod::proxy, Phase::cold, 0.5),
                              res("Site One", "P1", BenchMethod::proxy, Phase::warm, 0.25),
                              res("Site One", "P1", BenchMethod::federation, Phase::cold, 1),
                              res("Site One", "P1", BenchMethod::federation, Phase::warm, 0.125)};
  auto files = render_report(rs, out.path());
  for (auto name : {"results.jsonl", "table3.csv", "table3.md", "percent_diff_all.csv",
                    "throughput_Site_One.csv", "throughput_Site_One.svg"})
    EXPECT_TRUE(std::filesystem::exists(out / name)) << name;
  EXPECT_EQ(read_results(out / "results.jsonl"), rs);
  auto csv = testkit::read_file(out / "throughput_Site_One.csv");
  EXPECT_NE(csv.find("P1,proxy,warm,4000,1"), std::string::npos) << csv;
  EXPECT_NE(csv.find("P1,federation,warm,8000,1"), std::string::npos);
  EXPECT_NE(testkit::read_file(out / "throughput_Site_One.svg").find("<svg"), std::string::npos);
  EXPECT_THROW(render_report({}, out.path()), Error);
}

namespace {

// At scale 1e6 the dataset is 1, 22, 170, 467, 493, 2335 and 10000 bytes.
constexpr std::uint64_t kScale = 1'000'000;

testkit::FederationLayout bench_layout() {
  testkit::FederationLayout l;
  l.cache_count = 1;
  l.chunk_size = 1024;
  l.proxy_max_object = 1000;  // between scaled P75 and P95
  return l;
}

SiteTargets targets(testkit::MiniFederation& fed) {
  SiteTargets s;
  s.site = "loopback";
  s.proxy = fed.proxy_ep;
  s.origin_url = "http://" + fed.origin_ep.str();
  s.redirectors = {fed.redirector_ep};
  s.caches = fed.cache_eps;
  s.location = testkit::kSyracuse;
  return s;
}

}  // namespace

TEST(RunMatrix, FourPhasesPerFileWithExpectedStatuses) {
  testkit::MiniFederation fed(bench_layout());
  DatasetSpec spec;
  spec.scale = kScale;
  spec.copies = 2;
  auto m = generate_dataset(spec, fed.origin_root.path());
  fed.reindex();

  RunOptions opt;
  opt.reps = 2;
  opt.chunk_size = 1024;
  auto results = run_matrix(m, {targets(fed)}, opt);
  ASSERT_EQ(results.size(), 2u * 7u * 4u);
  for (std::size_t i = 0; i < results.size(); i += 4) {
    const auto& label = results[i].file_label;
    const bool big = label == "P95" || label == "XL";
    for (int k = 0; k < 4; ++k) {
      ASSERT_TRUE(results[i + k].ok) << results[i + k].error;
      EXPECT_EQ(results[i + k].file_label, label);
    }
    EXPECT_EQ(results[i].status, big ? "UNCACHEABLE" : "MISS") << label;
    EXPECT_EQ(results[i + 1].status, big ? "UNCACHEABLE" : "HIT") << label;
    EXPECT_EQ(results[i + 2].status, "MISS") << label;
    EXPECT_EQ(results[i + 3].status, "HIT") << label;
    EXPECT_EQ(results[i + 2].origin_fetches,
              static_cast<std::int64_t>(chunk_count(scaled_size(
                  std::find_if(reference_dataset().begin(), reference_dataset().end(),
                               [&](auto& e) { return e.label == label; })->unscaled_bytes, kScale), 1024)));
    EXPECT_EQ(results[i + 3].origin_fetches, 0);
  }

  TempDir out;
  render_report(results, out.path());
  auto t = parse_table3_csv(testkit::read_file(out / "table3.csv"));
  EXPECT_EQ(t.sites, std::vector<std::string>{"loopback"});
  EXPECT_TRUE(t.cell("loopback", "P95").has_value());
}

TEST(RunMatrix, PerPassOrderingExpiresEarlyFiles) {
  ManualClock clock;
  auto layout = bench_layout();
  layout.proxy_ttl = 25;
  layout.proxy_clock = &clock;
  testkit::MiniFederation fed(layout);
  DatasetSpec spec;
  spec.scale = kScale;
  spec.copies = 2;
  auto m = generate_dataset(spec, fed.origin_root.path());
  fed.reindex();

  RunOptions opt;
  opt.reps = 1;
  opt.chunk_size = 1024;
  opt.on_result = [&](const BenchResult&) { clock.advance(10); };

  opt.per_pass = true;
  auto per_pass_order = run_matrix(m, {targets(fed)}, opt);
  ASSERT_EQ(per_pass_order.size(), 28u);
  // second pass starts at index 7; the first file was fetched 70 s earlier
  EXPECT_EQ(per_pass_order[7].phase, Phase::warm);
  EXPECT_EQ(per_pass_order[7].file_label, "P1");
  EXPECT_EQ(per_pass_order[7].status, "MISS");

  // a fresh copy so the per-file run starts cold too
  opt.per_pass = false;
  auto fresh = m;
  fresh.files.clear();
  for (const auto& f : m.files)
    if (f.copy == 1) {
      auto g = f;
      g.copy = 0;
      fresh.files.push_back(g);
    }
  auto per_file = run_matrix(fresh, {targets(fed)}, opt);
  for (const auto& r : per_file)
    if (r.method == BenchMethod::proxy && r.phase == Phase::warm && r.file_label != "P95" &&
        r.file_label != "XL")
      EXPECT_EQ(r.status, "HIT") << r.file_label;
}

TEST(RunMatrix, RejectsTooFewCopiesAndDeadProxy) {
  testkit::FederationLayout l = bench_layout();
  l.proxy = false;
  testkit::MiniFederation fed(l);
  DatasetSpec spec;
  spec.scale = kScale;
  spec.copies = 1;
  auto m = generate_dataset(spec, fed.origin_root.path());
  RunOptions opt;
  opt.reps = 2;
  EXPECT_THROW(run_matrix(m, {targets(fed)}, opt), Error);
  opt.reps = 1;
  try {
    run_matrix(m, {targets(fed)}, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::upstream_unreachable);
  }
}
