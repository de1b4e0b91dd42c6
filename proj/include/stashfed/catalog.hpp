#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stashfed/checksum.hpp"
#include "stashfed/path.hpp"

namespace stashfed {

// Authoritative per-file metadata produced by the origin's indexer.
struct FileCatalogEntry {
  FederationPath path;
  std::uint64_t size = 0;
  std::int64_t mtime = 0;
  std::uint32_t mode = 0;
  std::vector<Digest> chunk_digests;

  friend bool operator==(const FileCatalogEntry&, const FileCatalogEntry&) = default;
};

using Catalog = std::map<FederationPath, FileCatalogEntry>;

// {"path":…,"size":…,"mtime":…,"mode":…,"chunks":[hex,…]} without newline.
std::string to_catalog_line(const FileCatalogEntry& entry);
FileCatalogEntry parse_catalog_line(std::string_view line);

// One line per entry, sorted by path, LF terminated.
void write_catalog(std::ostream& out, const Catalog& catalog);
std::string catalog_text(const Catalog& catalog);
Catalog parse_catalog(std::string_view text);

}  // namespace stashfed
