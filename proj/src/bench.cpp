#include "stashfed/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/client.hpp"
#include "stashfed/error.hpp"
#include "stashfed/proxy.hpp"

namespace fs = std::filesystem;

namespace stashfed::bench {

const std::vector<DatasetEntry>& reference_dataset() {
  static const std::vector<DatasetEntry> entries{
      {"P1", 5'797ull},
      {"P5", 22'801'000ull},
      {"P25", 170'131'000ull},
      {"P50", 467'852'000ull},
      {"P75", 493'337'000ull},
      {"P95", 2'335'000'000ull},
      {"XL", 10'000'000'000ull},
  };
  return entries;
}

std::uint64_t scaled_size(std::uint64_t unscaled, std::uint64_t scale) {
  if (scale == 0) throw Error(Errc::invalid_argument, "scale must be positive");
  return std::max<std::uint64_t>(1, unscaled / scale);
}

// ---- manifest ----

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files)
    files.push_back({{"label", f.label},
                     {"copy", f.copy},
                     {"relative", f.relative},
                     {"path", f.path.str()},
                     {"size", f.size},
                     {"sha256", f.sha256}});
  return {{"run_id", m.run_id}, {"scale", m.scale},       {"seed", m.seed},
          {"copies", m.copies}, {"prefix", m.prefix.str()}, {"files", files}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.scale = j.at("scale").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.copies = j.at("copies").get<std::uint32_t>();
    m.prefix = normalize_path(j.at("prefix").get<std::string>());
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("label").get<std::string>(), f.at("copy").get<std::uint32_t>(),
                         f.at("relative").get<std::string>(), normalize_path(f.at("path").get<std::string>()),
                         f.at("size").get<std::uint64_t>(), f.at("sha256").get<std::string>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("bad manifest: ") + e.what());
  }
}

void write_manifest(const Manifest& m, const fs::path& file) {
  std::ofstream out(file);
  out << to_json(m).dump(2) << "\n";
  if (!out) throw Error(Errc::io_error, "cannot write " + file.string());
}

Manifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::not_found, file.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::invalid_argument, std::string("bad manifest: ") + e.what());
  }
}

// ---- dataset ----

namespace {

constexpr std::size_t kBlock = 1 << 20;

class ContentStream {
 public:
  ContentStream(std::uint64_t seed, std::string_view label, std::uint32_t copy) {
    auto d = Sha256::of(label);
    std::uint32_t h0 = (std::uint32_t{d[0]} << 24) | (std::uint32_t{d[1]} << 16) | (std::uint32_t{d[2]} << 8) | d[3];
    std::uint32_t h1 = (std::uint32_t{d[4]} << 24) | (std::uint32_t{d[5]} << 16) | (std::uint32_t{d[6]} << 8) | d[7];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), h0, h1, copy};
    rng_.seed(seq);
  }
  void fill(char* out, std::size_t n) {
    std::size_t i = 0;
    while (i < n) {
      auto v = rng_();
      for (int b = 0; b < 8 && i < n; ++b, ++i) out[i] = static_cast<char>((v >> (8 * b)) & 0xff);
    }
  }

 private:
  std::mt19937_64 rng_;
};

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  Sha256 h;
  std::string buf(kBlock, '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return to_hex(h.finish());
}

}  // namespace

std::string file_content(std::uint64_t seed, std::string_view label, std::uint32_t copy, std::uint64_t size) {
  ContentStream s(seed, label, copy);
  std::string out(size, '\0');
  // generated in blocks so the bytes match generate_dataset exactly
  for (std::uint64_t off = 0; off < size; off += kBlock)
    s.fill(out.data() + off, static_cast<std::size_t>(std::min<std::uint64_t>(kBlock, size - off)));
  return out;
}

Manifest generate_dataset(const DatasetSpec& spec, const fs::path& root) {
  if (spec.copies == 0) throw Error(Errc::invalid_argument, "copies must be positive");
  Manifest m;
  m.run_id = spec.run_id.empty() ? "run-" + std::to_string(spec.seed) : spec.run_id;
  m.scale = spec.scale;
  m.seed = spec.seed;
  m.copies = spec.copies;
  m.prefix = spec.prefix;

  for (const auto& e : spec.entries) {
    const auto size = scaled_size(e.unscaled_bytes, spec.scale);
    for (std::uint32_t copy = 0; copy < spec.copies; ++copy) {
      ManifestFile f;
      f.label = e.label;
      f.copy = copy;
      f.relative = "bench/" + m.run_id + "/" + e.label + ".r" + std::to_string(copy);
      f.path = spec.prefix.join(f.relative);
      f.size = size;

      const auto target = root / f.relative;
      std::error_code ec;
      fs::create_directories(target.parent_path(), ec);
      auto tmp = target;
      tmp += ".gen";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        ContentStream s(spec.seed, e.label, copy);
        Sha256 h;
        std::string buf(kBlock, '\0');
        for (std::uint64_t off = 0; off < size; off += kBlock) {
          auto n = static_cast<std::size_t>(std::min<std::uint64_t>(kBlock, size - off));
          s.fill(buf.data(), n);
          h.update(std::string_view(buf.data(), n));
          out.write(buf.data(), static_cast<std::streamsize>(n));
        }
        if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string() + " (disk full?)");
        f.sha256 = to_hex(h.finish());
      }
      if (fs::exists(target, ec) && fs::file_size(target, ec) == size && file_digest(target) == f.sha256) {
        fs::remove(tmp, ec);
      } else {
        fs::rename(tmp, target, ec);
        if (ec) throw Error(Errc::io_error, "cannot place " + target.string());
      }
      m.files.push_back(std::move(f));
    }
  }
  return m;
}

// ---- results ----

std::string_view name(BenchMethod m) noexcept { return m == BenchMethod::proxy ? "proxy" : "federation"; }
std::string_view name(Phase p) noexcept { return p == Phase::cold ? "cold" : "warm"; }

nlohmann::json to_json(const BenchResult& r) {
  return {{"site", r.site},
          {"file", r.file_label},
          {"rep", r.rep},
          {"method", std::string(name(r.method))},
          {"phase", std::string(name(r.phase))},
          {"duration", r.duration},
          {"bytes", r.bytes},
          {"status", r.status},
          {"ok", r.ok},
          {"error", r.error},
          {"origin_fetches", r.origin_fetches ? nlohmann::json(*r.origin_fetches) : nlohmann::json()}};
}

BenchResult bench_result_from_json(const nlohmann::json& j) {
  BenchResult r;
  r.site = j.at("site").get<std::string>();
  r.file_label = j.at("file").get<std::string>();
  r.rep = j.at("rep").get<std::uint32_t>();
  r.method = j.at("method").get<std::string>() == "proxy" ? BenchMethod::proxy : BenchMethod::federation;
  r.phase = j.at("phase").get<std::string>() == "cold" ? Phase::cold : Phase::warm;
  r.duration = j.at("duration").get<double>();
  r.bytes = j.at("bytes").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.value("error", "");
  if (j.contains("origin_fetches") && !j["origin_fetches"].is_null())
    r.origin_fetches = j["origin_fetches"].get<std::int64_t>();
  return r;
}

void write_results(const std::vector<BenchResult>& results, const fs::path& file) {
  std::ofstream out(file, std::ios::trunc);
  for (const auto& r : results) out << to_json(r).dump() << "\n";
  if (!out) throw Error(Errc::io_error, "cannot write " + file.string());
}

std::vector<BenchResult> read_results(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::not_found, file.string());
  std::vector<BenchResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(bench_result_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// ---- run ----

namespace {

using Clk = std::chrono::steady_clock;

std::optional<std::int64_t> total_origin_fetches(const std::vector<Endpoint>& caches) {
  if (caches.empty()) return std::nullopt;
  std::int64_t total = 0;
  for (const auto& c : caches) {
    auto cli = detail::make_client(c, 2, 10);
    auto res = cli->Get("/stats");
    if (!res || res->status != 200) return std::nullopt;
    total += nlohmann::json::parse(res->body).value("origin_fetches", std::int64_t{0});
  }
  return total;
}

void require_stats(const Endpoint& ep, const std::string& what) {
  auto cli = detail::make_client(ep, 2, 10);
  auto res = cli->Get("/stats");
  if (!res || res->status != 200)
    throw Error(Errc::upstream_unreachable, what + " " + ep.str() + " failed preflight");
}

class Runner {
 public:
  Runner(const RunOptions& opt, fs::path scratch) : opt_(opt), scratch_(std::move(scratch)) {}

  BenchResult run(const SiteTargets& site, const ManifestFile& f, std::uint32_t rep, BenchMethod m, Phase p) {
    BenchResult r;
    r.site = site.site;
    r.file_label = f.label;
    r.rep = rep;
    r.method = m;
    r.phase = p;
    try {
      if (m == BenchMethod::proxy)
        proxy_phase(site, f, r);
      else
        federation_phase(site, f, r);
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    if (opt_.on_result) opt_.on_result(r);
    return r;
  }

 private:
  void proxy_phase(const SiteTargets& site, const ManifestFile& f, BenchResult& r) {
    auto origin = endpoint_from_url(site.origin_url);
    auto cli = detail::make_client(origin, 2, 600);
    cli->set_proxy(site.proxy.host, site.proxy.port);
    auto t = Clk::now();
    auto res = cli->Get("/data" + f.path.str());
    r.duration = std::chrono::duration<double>(Clk::now() - t).count();
    if (!res) throw Error(Errc::upstream_unreachable, "proxy " + site.proxy.str());
    r.status = res->get_header_value("X-Proxy-Cache");
    if (res->status != 200) throw Error(Errc::io_error, "proxy answered " + std::to_string(res->status));
    r.bytes = res->body.size();
    if (to_hex(Sha256::of(res->body)) != f.sha256) throw Error(Errc::integrity_error, "proxy bytes differ");
  }

  void federation_phase(const SiteTargets& site, const ManifestFile& f, BenchResult& r) {
    ClientOptions o;
    o.redirectors = site.redirectors;
    o.caches = site.caches;
    o.location = site.location;
    o.methods = {Method::cache_federation};
    o.chunk_size = opt_.chunk_size;
    o.read_timeout = 600;
    auto dest = scratch_ / (f.label + ".r" + std::to_string(f.copy) + "." + std::string(name(r.phase)));
    auto before = total_origin_fetches(site.caches);
    auto t = Clk::now();
    auto report = download(f.path, dest, o);
    r.duration = std::chrono::duration<double>(Clk::now() - t).count();
    auto after = total_origin_fetches(site.caches);
    if (before && after) r.origin_fetches = *after - *before;
    if (report.cache_status) r.status = std::string(cache_status_name(*report.cache_status));
    if (!report.success) {
      std::error_code ec;
      fs::remove(dest, ec);
      throw Error(Errc::all_methods_failed, report.attempts.back().detail);
    }
    r.bytes = report.bytes;
    auto digest = file_digest(dest);
    std::error_code ec;
    fs::remove(dest, ec);
    if (digest != f.sha256) throw Error(Errc::integrity_error, "federation bytes differ");
  }

  const RunOptions& opt_;
  fs::path scratch_;
};

}  // namespace

std::vector<BenchResult> run_matrix(const Manifest& manifest, const std::vector<SiteTargets>& sites,
                                    const RunOptions& options) {
  if (options.reps == 0) throw Error(Errc::invalid_argument, "reps must be positive");
  if (options.reps > manifest.copies)
    throw Error(Errc::invalid_argument, "manifest has " + std::to_string(manifest.copies) +
                                            " copies per file, fewer than reps");
  if (options.preflight) {
    for (const auto& s : sites) {
      require_stats(s.proxy, "proxy");
      for (const auto& c : s.caches) require_stats(c, "cache");
    }
  }

  fs::path scratch = options.scratch;
  std::optional<fs::path> owned;
  if (scratch.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "stashfed-bench-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error(Errc::io_error, "mkdtemp failed");
    scratch = tmpl;
    owned = scratch;
  }
  fs::create_directories(scratch);

  // label order of first appearance; copy index = repetition
  std::vector<std::string> labels;
  std::map<std::pair<std::string, std::uint32_t>, const ManifestFile*> by_copy;
  for (const auto& f : manifest.files) {
    if (std::find(labels.begin(), labels.end(), f.label) == labels.end()) labels.push_back(f.label);
    by_copy[{f.label, f.copy}] = &f;
  }

  const std::pair<BenchMethod, Phase> phases[] = {{BenchMethod::proxy, Phase::cold},
                                                  {BenchMethod::proxy, Phase::warm},
                                                  {BenchMethod::federation, Phase::cold},
                                                  {BenchMethod::federation, Phase::warm}};
  Runner runner(options, scratch);
  std::vector<BenchResult> out;
  for (const auto& site : sites) {
    for (std::uint32_t rep = 0; rep < options.reps; ++rep) {
      if (options.per_pass) {
        for (auto [m, p] : phases)
          for (const auto& label : labels) out.push_back(runner.run(site, *by_copy.at({label, rep}), rep, m, p));
      } else {
        for (const auto& label : labels)
          for (auto [m, p] : phases) out.push_back(runner.run(site, *by_copy.at({label, rep}), rep, m, p));
      }
    }
  }
  if (owned) {
    std::error_code ec;
    fs::remove_all(*owned, ec);
  }
  return out;
}

// ---- report ----

double percent_diff(double t_proxy, double t_federation) {
  if (!(t_proxy > 0)) throw Error(Errc::undefined_baseline, "proxy time must be positive");
  return (t_federation - t_proxy) / t_proxy * 100.0;
}

std::string format_percent(double pct) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.1f%%", pct);
  return buf;
}

std::optional<double> Table3::cell(const std::string& site, const std::string& label) const {
  auto it = cells.find({site, label});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::string> ordered_labels(const std::vector<BenchResult>& results) {
  std::vector<std::string> out;
  for (const auto& e : reference_dataset())
    for (const auto& r : results)
      if (r.file_label == e.label) {
        out.push_back(e.label);
        break;
      }
  for (const auto& r : results)
    if (std::find(out.begin(), out.end(), r.file_label) == out.end()) out.push_back(r.file_label);
  return out;
}

std::vector<std::string> ordered_sites(const std::vector<BenchResult>& results) {
  std::vector<std::string> out;
  for (const auto& r : results)
    if (std::find(out.begin(), out.end(), r.site) == out.end()) out.push_back(r.site);
  return out;
}

std::optional<double> mean_duration(const std::vector<BenchResult>& results, const std::string& site,
                                    const std::string& label, BenchMethod m, Phase p) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : results)
    if (r.ok && r.site == site && r.file_label == label && r.method == m && r.phase == p) {
      sum += r.duration;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string full_precision(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string file_safe(const std::string& s) {
  std::string out = s;
  for (auto& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

}  // namespace

Table3 compute_table3(const std::vector<BenchResult>& results, const std::vector<std::string>& labels) {
  Table3 t;
  t.sites = ordered_sites(results);
  if (labels.empty()) {
    t.labels = ordered_labels(results);
  } else {
    t.labels = labels;
  }
  for (const auto& site : t.sites) {
    for (const auto& label : t.labels) {
      auto tp = mean_duration(results, site, label, BenchMethod::proxy, Phase::warm);
      auto tf = mean_duration(results, site, label, BenchMethod::federation, Phase::warm);
      if (tp && tf && *tp > 0) t.cells[{site, label}] = percent_diff(*tp, *tf);
    }
  }
  return t;
}

std::string table3_csv(const Table3& t) {
  std::ostringstream out;
  out << "site";
  for (const auto& l : t.labels) out << "," << l;
  out << "\n";
  for (const auto& s : t.sites) {
    out << s;
    for (const auto& l : t.labels) {
      auto c = t.cell(s, l);
      out << "," << (c ? full_precision(*c) : "n/a");
    }
    out << "\n";
  }
  return out.str();
}

Table3 parse_table3_csv(std::string_view csv) {
  Table3 t;
  std::istringstream in{std::string(csv)};
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  if (!std::getline(in, line)) throw Error(Errc::invalid_argument, "empty table");
  auto header = split(line);
  if (header.empty() || header[0] != "site") throw Error(Errc::invalid_argument, "bad table header");
  t.labels.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    t.sites.push_back(cells.at(0));
    for (std::size_t i = 1; i < cells.size() && i <= t.labels.size(); ++i)
      if (cells[i] != "n/a") t.cells[{cells[0], t.labels[i - 1]}] = std::stod(cells[i]);
  }
  return t;
}

std::string table3_markdown(const Table3& t) {
  std::ostringstream out;
  out << "| Site |";
  for (const auto& l : t.labels) out << " " << l << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < t.labels.size(); ++i) out << "---|";
  out << "\n";
  for (const auto& s : t.sites) {
    out << "| " << s << " |";
    for (const auto& l : t.labels) {
      auto c = t.cell(s, l);
      out << " " << (c ? format_percent(*c) : "n/a") << " |";
    }
    out << "\n";
  }
  return out.str();
}

std::vector<ThroughputRow> throughput(const std::vector<BenchResult>& results, const std::string& site) {
  std::vector<ThroughputRow> rows;
  for (const auto& label : ordered_labels(results)) {
    for (auto m : {BenchMethod::proxy, BenchMethod::federation}) {
      for (auto p : {Phase::cold, Phase::warm}) {
        ThroughputRow row{label, m, p, 0, 0};
        double sum = 0;
        for (const auto& r : results)
          if (r.ok && r.site == site && r.file_label == label && r.method == m && r.phase == p &&
              r.duration > 0) {
            sum += static_cast<double>(r.bytes) / r.duration;
            ++row.samples;
          }
        if (row.samples == 0) continue;
        row.mean_bytes_per_second = sum / static_cast<double>(row.samples);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string throughput_csv(const std::vector<ThroughputRow>& rows) {
  std::ostringstream out;
  out << "file,method,phase,mean_bytes_per_second,samples\n";
  for (const auto& r : rows)
    out << r.label << "," << name(r.method) << "," << name(r.phase) << ","
        << full_precision(r.mean_bytes_per_second) << "," << r.samples << "\n";
  return out.str();
}

std::string throughput_svg(const std::string& site, const std::vector<ThroughputRow>& rows) {
  std::vector<std::string> labels;
  for (const auto& r : rows)
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
  double max_v = 0;
  for (const auto& r : rows) max_v = std::max(max_v, r.mean_bytes_per_second);
  if (max_v <= 0) max_v = 1;

  const int bar = 14, gap = 24, left = 70, top = 40, plot_h = 260;
  const int group_w = 4 * bar + gap;
  const int width = left + static_cast<int>(labels.size()) * group_w + 180;
  const int height = top + plot_h + 60;
  const char* colors[] = {"#9ecae1", "#3182bd", "#fdae6b", "#e6550d"};
  const char* series[] = {"proxy cold", "proxy warm", "federation cold", "federation warm"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << site
      << ": mean throughput (bytes/s, higher is better)</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
      << left + static_cast<int>(labels.size()) * group_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"5\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << full_precision(max_v) << "</text>\n";
  for (std::size_t li = 0; li < labels.size(); ++li) {
    const int gx = left + static_cast<int>(li) * group_w;
    int si = 0;
    for (auto m : {BenchMethod::proxy, BenchMethod::federation}) {
      for (auto p : {Phase::cold, Phase::warm}) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const ThroughputRow& r) {
          return r.label == labels[li] && r.method == m && r.phase == p;
        });
        if (it != rows.end()) {
          const int h = static_cast<int>(std::lround(it->mean_bytes_per_second / max_v * plot_h));
          svg << "<rect x=\"" << gx + si * bar << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar - 2
              << "\" height=\"" << h << "\" fill=\"" << colors[si] << "\"/>\n";
        }
        ++si;
      }
    }
    svg << "<text x=\"" << gx << "\" y=\"" << top + plot_h + 16
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << labels[li] << "</text>\n";
  }
  const int lx = left + static_cast<int>(labels.size()) * group_w + 20;
  for (int i = 0; i < 4; ++i) {
    svg << "<rect x=\"" << lx << "\" y=\"" << top + i * 18 << "\" width=\"12\" height=\"12\" fill=\""
        << colors[i] << "\"/>\n";
    svg << "<text x=\"" << lx + 18 << "\" y=\"" << top + i * 18 + 10
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> render_report(const std::vector<BenchResult>& results, const fs::path& out_dir,
                                    const ReportOptions& options) {
  if (results.empty()) throw Error(Errc::invalid_argument, "no results to report");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::vector<fs::path> written;
  auto put = [&](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
    if (!out) throw Error(Errc::io_error, "cannot write " + p.string());
    written.push_back(p);
  };

  write_results(results, out_dir / "results.jsonl");
  written.push_back(out_dir / "results.jsonl");
  auto t3 = compute_table3(results, options.table3_labels);
  put(out_dir / "table3.csv", table3_csv(t3));
  put(out_dir / "table3.md", table3_markdown(t3));
  put(out_dir / "percent_diff_all.csv", table3_csv(compute_table3(results, {})));
  for (const auto& site : ordered_sites(results)) {
    auto rows = throughput(results, site);
    put(out_dir / ("throughput_" + file_safe(site) + ".csv"), throughput_csv(rows));
    put(out_dir / ("throughput_" + file_safe(site) + ".svg"), throughput_svg(site, rows));
  }
  return written;
}

}  // namespace stashfed::bench
