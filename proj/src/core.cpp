#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "stashfed/catalog.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/chunk.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/error.hpp"
#include "stashfed/geo.hpp"
#include "stashfed/path.hpp"

namespace stashfed {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_path: return "malformed-path";
    case Errc::oversized_chunk: return "oversized-chunk";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::not_found: return "not-found";
    case Errc::range_unsatisfiable: return "range-unsatisfiable";
    case Errc::io_error: return "io-error";
    case Errc::conflict: return "conflict";
    case Errc::malformed_descriptor: return "malformed-descriptor";
    case Errc::origin_unreachable: return "origin-unreachable";
    case Errc::integrity_error: return "integrity-error";
    case Errc::cache_full: return "cache-full";
    case Errc::no_caches: return "no-caches";
    case Errc::all_methods_failed: return "all-methods-failed";
    case Errc::malformed_packet: return "malformed-packet";
    case Errc::unencodable: return "unencodable";
    case Errc::sink_unavailable: return "sink-unavailable";
    case Errc::upstream_unreachable: return "upstream-unreachable";
    case Errc::undefined_baseline: return "undefined-baseline";
  }
  return "unknown";
}

// ---------------------------------------------------------------- paths

FederationPath FederationPath::normalize(std::string_view raw) {
  if (raw.empty()) throw Error(Errc::malformed_path, "empty path");
  if (raw.find('\0') != std::string_view::npos)
    throw Error(Errc::malformed_path, "embedded NUL");

  std::vector<std::string_view> segments;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    auto next = raw.find('/', pos);
    if (next == std::string_view::npos) next = raw.size();
    auto seg = raw.substr(pos, next - pos);
    if (seg.empty() || seg == ".") {
      // skip
    } else if (seg == "..") {
      if (segments.empty())
        throw Error(Errc::malformed_path, "'..' escapes the root: " + std::string(raw));
      segments.pop_back();
    } else {
      segments.push_back(seg);
    }
    pos = next + 1;
  }

  std::string out;
  for (auto seg : segments) {
    out += '/';
    out += seg;
  }
  if (out.empty()) out = "/";
  return FederationPath(std::move(out));
}

bool FederationPath::has_prefix(const FederationPath& prefix) const noexcept {
  if (prefix.is_root()) return true;
  const auto& p = prefix.text_;
  if (text_.size() < p.size() || text_.compare(0, p.size(), p) != 0) return false;
  return text_.size() == p.size() || text_[p.size()] == '/';
}

FederationPath FederationPath::join(std::string_view relative) const {
  return normalize(text_ + "/" + std::string(relative));
}

std::string FederationPath::relative_to(const FederationPath& prefix) const {
  if (!has_prefix(prefix)) return {};
  if (prefix.is_root()) return text_.substr(1);
  if (text_.size() == prefix.text_.size()) return {};
  return text_.substr(prefix.text_.size() + 1);
}

// ---------------------------------------------------------------- chunks

std::uint64_t chunk_count(std::uint64_t file_size, std::uint64_t chunk_size) {
  if (chunk_size == 0) throw Error(Errc::invalid_argument, "chunk size 0");
  return file_size / chunk_size + (file_size % chunk_size != 0 ? 1 : 0);
}

ChunkSpec chunk_at(std::uint64_t file_size, std::uint64_t index, std::uint64_t chunk_size) {
  const auto offset = index * chunk_size;
  if (offset >= file_size) throw Error(Errc::invalid_argument, "chunk index past EOF");
  return {index, offset, std::min(chunk_size, file_size - offset)};
}

std::vector<ChunkSpec> chunk_layout(std::uint64_t file_size, std::uint64_t chunk_size) {
  std::vector<ChunkSpec> out;
  const auto n = chunk_count(file_size, chunk_size);
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(chunk_at(file_size, i, chunk_size));
  return out;
}

std::vector<std::uint64_t> chunks_overlapping(std::uint64_t file_size, ByteRange range,
                                              std::uint64_t chunk_size) {
  range.end = std::min(range.end, file_size);
  std::vector<std::uint64_t> out;
  if (range.empty()) return out;
  for (auto i = range.begin / chunk_size; i * chunk_size < range.end; ++i) out.push_back(i);
  return out;
}

ByteRange resolve_range(std::uint64_t file_size, const std::optional<ByteRange>& range) {
  if (!range) return {0, file_size};
  if (range->empty()) return {range->begin, range->begin};
  if (range->begin >= file_size)
    throw Error(Errc::range_unsatisfiable, "range starts at " + std::to_string(range->begin) +
                                               " of " + std::to_string(file_size));
  return {range->begin, std::min(range->end, file_size)};
}

// ---------------------------------------------------------------- checksums

struct Sha256::Impl {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  Impl() {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
      throw Error(Errc::io_error, "sha256 init failed");
  }
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {}
Sha256::~Sha256() = default;
Sha256::Sha256(Sha256&&) noexcept = default;
Sha256& Sha256::operator=(Sha256&&) noexcept = default;

void Sha256::update(std::string_view data) {
  EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
}

Digest Sha256::finish() {
  Digest out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
  EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr);
  return out;
}

Digest Sha256::of(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.finish();
}

Digest chunk_checksum(std::string_view data, std::uint64_t chunk_size) {
  if (data.size() > chunk_size)
    throw Error(Errc::oversized_chunk, std::to_string(data.size()) + " bytes");
  return Sha256::of(data);
}

Digest chunk_checksum(std::span<const std::byte> data, std::uint64_t chunk_size) {
  return chunk_checksum(
      std::string_view(reinterpret_cast<const char*>(data.data()), data.size()), chunk_size);
}

std::string to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : digest) {
    out += kHex[b >> 4];
    out += kHex[b & 0xf];
  }
  return out;
}

Digest digest_from_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(Errc::invalid_argument, "digest must be 64 hex chars");
  Digest out{};
  for (std::size_t i = 0; i < 32; ++i) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, v, 16);
    if (ec != std::errc{} || p != hex.data() + 2 * i + 2)
      throw Error(Errc::invalid_argument, "bad hex digest");
    out[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

// ---------------------------------------------------------------- geo

GeoCoordinate::GeoCoordinate(double latitude, double longitude) : lat_(latitude), lon_(longitude) {
  if (!(latitude >= -90.0 && latitude <= 90.0) || !(longitude >= -180.0 && longitude <= 180.0))
    throw Error(Errc::invalid_argument, "coordinate out of range");
}

double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) noexcept {
  constexpr double kRad = M_PI / 180.0;
  const double phi1 = a.latitude() * kRad;
  const double phi2 = b.latitude() * kRad;
  const double dphi = phi2 - phi1;
  const double dlambda = (b.longitude() - a.longitude()) * kRad;
  const double s1 = std::sin(dphi / 2);
  const double s2 = std::sin(dlambda / 2);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

// ---------------------------------------------------------------- endpoints

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
    throw Error(Errc::invalid_argument, "expected host:port, got '" + std::string(text) + "'");
  unsigned port = 0;
  auto digits = text.substr(colon + 1);
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || p != digits.data() + digits.size() || port > 65535)
    throw Error(Errc::invalid_argument, "bad port in '" + std::string(text) + "'");
  auto host = text.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']')
    host = host.substr(1, host.size() - 2);
  return {std::string(host), static_cast<std::uint16_t>(port)};
}

std::vector<Endpoint> Endpoint::parse_list(std::string_view comma_separated) {
  std::vector<Endpoint> out;
  std::size_t pos = 0;
  while (pos < comma_separated.size()) {
    auto next = comma_separated.find(',', pos);
    if (next == std::string_view::npos) next = comma_separated.size();
    auto item = comma_separated.substr(pos, next - pos);
    if (!item.empty()) out.push_back(parse(item));
    pos = next + 1;
  }
  return out;
}

// ---------------------------------------------------------------- catalog

namespace {

std::string mode_text(std::uint32_t mode) {
  std::ostringstream os;
  os << '0' << std::oct << (mode & 07777);
  return os.str();
}

}  // namespace

std::string to_catalog_line(const FileCatalogEntry& entry) {
  nlohmann::ordered_json j;
  j["path"] = entry.path.str();
  j["size"] = entry.size;
  j["mtime"] = entry.mtime;
  j["mode"] = mode_text(entry.mode);
  auto chunks = nlohmann::ordered_json::array();
  for (const auto& d : entry.chunk_digests) chunks.push_back(to_hex(d));
  j["chunks"] = std::move(chunks);
  return j.dump();
}

FileCatalogEntry parse_catalog_line(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    FileCatalogEntry e;
    e.path = FederationPath::normalize(j.at("path").get<std::string>());
    e.size = j.at("size").get<std::uint64_t>();
    e.mtime = j.at("mtime").get<std::int64_t>();
    e.mode = static_cast<std::uint32_t>(std::stoul(j.at("mode").get<std::string>(), nullptr, 8));
    for (const auto& h : j.at("chunks")) e.chunk_digests.push_back(digest_from_hex(h.get<std::string>()));
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::invalid_argument, std::string("bad catalog line: ") + ex.what());
  } catch (const std::logic_error& ex) {
    throw Error(Errc::invalid_argument, std::string("bad catalog line: ") + ex.what());
  }
}

void write_catalog(std::ostream& out, const Catalog& catalog) {
  for (const auto& [path, entry] : catalog) out << to_catalog_line(entry) << '\n';
}

std::string catalog_text(const Catalog& catalog) {
  std::ostringstream os;
  write_catalog(os, catalog);
  return os.str();
}

Catalog parse_catalog(std::string_view text) {
  Catalog out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty()) {
      auto e = parse_catalog_line(line);
      out.emplace(e.path, std::move(e));
    }
    pos = nl + 1;
  }
  return out;
}

}  // namespace stashfed
