#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stashfed/chunk.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/geo.hpp"
#include "stashfed/path.hpp"

namespace stashfed::bench {

struct DatasetEntry {
  std::string label;
  std::uint64_t unscaled_bytes = 0;
};

// Size percentiles of the reference workload plus a 10 GB file.
const std::vector<DatasetEntry>& reference_dataset();

// max(1, floor(unscaled / scale)).
std::uint64_t scaled_size(std::uint64_t unscaled, std::uint64_t scale);

struct DatasetSpec {
  std::uint64_t scale = 1000;
  std::uint64_t seed = 1;
  std::string run_id;          // defaults to "run-<seed>"
  std::uint32_t copies = 3;    // one distinct file per repetition
  FederationPath prefix = normalize_path("/exp1");
  std::vector<DatasetEntry> entries = reference_dataset();
};

struct ManifestFile {
  std::string label;
  std::uint32_t copy = 0;
  std::string relative;  // below the origin root
  FederationPath path;
  std::uint64_t size = 0;
  std::string sha256;
};

struct Manifest {
  std::string run_id;
  std::uint64_t scale = 0;
  std::uint64_t seed = 0;
  std::uint32_t copies = 0;
  FederationPath prefix;
  std::vector<ManifestFile> files;  // label order, then copy
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const Manifest& m, const std::filesystem::path& file);
Manifest read_manifest(const std::filesystem::path& file);

// Deterministic content for (seed, label, copy).
std::string file_content(std::uint64_t seed, std::string_view label, std::uint32_t copy, std::uint64_t size);

// Writes every file under `root` (skipping files that already match) and
// returns the manifest. Throws io-error when a file cannot be written.
Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

enum class BenchMethod { proxy, federation };
enum class Phase { cold, warm };
std::string_view name(BenchMethod m) noexcept;
std::string_view name(Phase p) noexcept;

struct BenchResult {
  std::string site;
  std::string file_label;
  std::uint32_t rep = 0;
  BenchMethod method = BenchMethod::proxy;
  Phase phase = Phase::cold;
  double duration = 0;
  std::uint64_t bytes = 0;
  std::string status;  // X-Proxy-Cache or X-Cache value
  bool ok = true;
  std::string error;
  std::optional<std::int64_t> origin_fetches;  // cache counter delta, federation phases

  friend bool operator==(const BenchResult&, const BenchResult&) = default;
};

nlohmann::json to_json(const BenchResult& r);
BenchResult bench_result_from_json(const nlohmann::json& j);
void write_results(const std::vector<BenchResult>& results, const std::filesystem::path& file);
std::vector<BenchResult> read_results(const std::filesystem::path& file);

struct SiteTargets {
  std::string site = "local";
  Endpoint proxy;
  std::string origin_url;  // http://H:P, the proxy's upstream
  std::vector<Endpoint> redirectors;
  std::vector<Endpoint> caches;
  GeoCoordinate location;
};

struct RunOptions {
  std::uint32_t reps = 3;
  // Per-pass ordering (all files per phase) instead of all four
  // phases per file.
  bool per_pass = false;
  std::uint64_t chunk_size = kChunkSize;
  std::filesystem::path scratch;  // download destination; a temp dir if empty
  bool preflight = true;
  std::function<void(const BenchResult&)> on_result;
};

// Throws Error(upstream_unreachable) when the proxy or a cache does not
// answer /stats. Transfer errors are recorded per result, not thrown.
std::vector<BenchResult> run_matrix(const Manifest& manifest, const std::vector<SiteTargets>& sites,
                                    const RunOptions& options);

// (t_federation - t_proxy) / t_proxy * 100. Throws Error(undefined_baseline)
// when t_proxy <= 0.
double percent_diff(double t_proxy, double t_federation);

// "%+.1f%%", e.g. -68.5%.
std::string format_percent(double pct);

struct Table3 {
  std::vector<std::string> sites;
  std::vector<std::string> labels;
  std::map<std::pair<std::string, std::string>, double> cells;  // absent = missing

  std::optional<double> cell(const std::string& site, const std::string& label) const;
};

// Cell = percent_diff(mean warm proxy duration, mean warm federation
// duration) over successful repetitions. Empty `labels` keeps every label.
Table3 compute_table3(const std::vector<BenchResult>& results,
                      const std::vector<std::string>& labels = {"P95", "XL"});

std::string table3_csv(const Table3& t);
Table3 parse_table3_csv(std::string_view csv);
std::string table3_markdown(const Table3& t);

struct ThroughputRow {
  std::string label;
  BenchMethod method = BenchMethod::proxy;
  Phase phase = Phase::cold;
  double mean_bytes_per_second = 0;
  std::size_t samples = 0;
};

std::vector<ThroughputRow> throughput(const std::vector<BenchResult>& results, const std::string& site);
std::string throughput_csv(const std::vector<ThroughputRow>& rows);
std::string throughput_svg(const std::string& site, const std::vector<ThroughputRow>& rows);

struct ReportOptions {
  std::vector<std::string> table3_labels{"P95", "XL"};
};

// Writes results.jsonl, table3.csv, table3.md, percent_diff_all.csv,
// throughput_<site>.csv and throughput_<site>.svg. Returns the paths.
std::vector<std::filesystem::path> render_report(const std::vector<BenchResult>& results,
                                                 const std::filesystem::path& out_dir,
                                                 const ReportOptions& options = {});

}  // namespace stashfed::bench
