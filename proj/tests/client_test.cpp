#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "federation_fixture.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/client.hpp"
#include "stashfed/error.hpp"
#include "test_util.hpp"

using namespace stashfed;
using testkit::MiniFederation;
using testkit::TempDir;

namespace {

CacheDescriptor desc(const char* id, GeoCoordinate where, std::uint16_t port = 1) {
  return {id, {"127.0.0.1", port}, where};
}

}  // namespace

TEST(SelectNearestCache, SyracusePrefersChicago) {
  auto ranked = select_nearest_cache(testkit::kSyracuse, {desc("sd", testkit::kSanDiego),
                                                         desc("chi", testkit::kChicago)});
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].cache_id, "chi");
  EXPECT_EQ(ranked[1].cache_id, "sd");
}

TEST(SelectNearestCache, SingleAndTiesAndEmpty) {
  auto one = select_nearest_cache(testkit::kSyracuse, {desc("only", testkit::kChicago)});
  EXPECT_EQ(one[0].cache_id, "only");
  auto tie = select_nearest_cache(GeoCoordinate(0, 0), {desc("b", GeoCoordinate(0, 10)),
                                                        desc("a", GeoCoordinate(0, -10))});
  EXPECT_EQ(tie[0].cache_id, "a");
  try {
    select_nearest_cache(testkit::kSyracuse, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_caches);
  }
}

TEST(Methods, Parse) {
  EXPECT_EQ(parse_methods("cache,origin,proxy"),
            (std::vector<Method>{Method::cache_federation, Method::direct_origin, Method::proxy_http}));
  EXPECT_EQ(parse_methods("proxy-http"), (std::vector<Method>{Method::proxy_http}));
  EXPECT_THROW(parse_methods("ftp"), Error);
  EXPECT_THROW(parse_methods(""), Error);
}

class VerifyDownload : public ::testing::Test {
 protected:
  void SetUp() override {
    data = testkit::random_bytes(3 * 100, 5);
    entry = {normalize_path("/x"), data.size(), 0, 0644, {}};
    for (const auto& c : chunk_layout(data.size(), 100))
      entry.chunk_digests.push_back(chunk_checksum(std::string_view(data).substr(c.offset, c.length), 100));
    file = dir / "f";
  }
  TempDir dir;
  std::string data;
  FileCatalogEntry entry;
  std::filesystem::path file;
};

TEST_F(VerifyDownload, IntactFile) {
  testkit::write_file(file, data);
  EXPECT_NO_THROW(verify_download(file, entry, 100));
}

TEST_F(VerifyDownload, FlippedByteNamesChunk) {
  auto bad = data;
  bad[150] = static_cast<char>(bad[150] ^ 1);
  testkit::write_file(file, bad);
  try {
    verify_download(file, entry, 100);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_EQ(e.chunk_index(), 1u);
  }
}

TEST_F(VerifyDownload, TruncatedFileIsSizeMismatch) {
  testkit::write_file(file, data.substr(0, 299));
  try {
    verify_download(file, entry, 100);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_FALSE(e.chunk_index().has_value());
  }
}

TEST(ExitCode, Mapping) {
  TransferReport r;
  r.success = true;
  EXPECT_EQ(exit_code(r), 0);
  r.success = false;
  r.attempts = {Attempt{Method::cache_federation, {}, false, Errc::not_found, {}, ""},
                Attempt{Method::direct_origin, {}, false, Errc::not_found, {}, ""}};
  EXPECT_EQ(exit_code(r), 2);
  r.attempts.push_back(Attempt{Method::proxy_http, {}, false, Errc::upstream_unreachable, {}, ""});
  EXPECT_EQ(exit_code(r), 4);
  r.attempts[0].error = Errc::integrity_error;
  EXPECT_EQ(exit_code(r), 3);
}

TEST(Download, CacheMissThenHit) {
  MiniFederation fed;
  auto body = testkit::random_bytes(10 * 1024 + 17, 11);
  auto path = fed.add_file("a/b.bin", body);
  TempDir out;
  auto opt = fed.client_options();

  auto r1 = download(path, out.path(), opt);
  ASSERT_TRUE(r1.success) << to_json(r1).dump();
  EXPECT_EQ(r1.method_used, Method::cache_federation);
  EXPECT_EQ(r1.cache_status, CacheStatus::miss);
  EXPECT_TRUE(r1.verified);
  EXPECT_EQ(r1.bytes, body.size());
  EXPECT_EQ(r1.destination, out.path() / "b.bin");
  EXPECT_EQ(testkit::read_file(r1.destination), body);

  auto r2 = download(path, out.path() / "copy.bin", opt);
  ASSERT_TRUE(r2.success);
  EXPECT_EQ(r2.cache_status, CacheStatus::hit);
  EXPECT_EQ(testkit::read_file(out.path() / "copy.bin"), body);
  EXPECT_EQ(fed.cache(0)->service().stats().origin_fetches, 11u);
  EXPECT_FALSE(std::filesystem::exists(out.path() / "copy.bin.stashcp.part"));
}

TEST(Download, RanksDirectoryFromRedirector) {
  MiniFederation fed;
  fed.cache(0)->register_now();
  fed.cache(1)->register_now();
  auto path = fed.add_file("r.bin", "ranked");
  TempDir out;
  auto opt = fed.client_options();
  opt.caches.clear();
  auto r = download(path, out.path(), opt);
  ASSERT_TRUE(r.success) << to_json(r).dump();
  ASSERT_EQ(r.attempts.size(), 1u);
  // redirector first, then the Chicago cache
  ASSERT_EQ(r.attempts[0].endpoints.size(), 2u);
  EXPECT_EQ(r.attempts[0].endpoints[1], fed.cache_eps[0].str());
}

TEST(Download, FallsBackToOriginWhenCachesDown) {
  testkit::FederationLayout layout;
  layout.caches = false;
  MiniFederation fed(layout);
  auto body = testkit::random_bytes(3000, 2);
  auto path = fed.add_file("f.bin", body);
  TempDir out;
  auto r = download(path, out.path(), fed.client_options());
  ASSERT_TRUE(r.success) << to_json(r).dump();
  EXPECT_EQ(r.method_used, Method::direct_origin);
  EXPECT_TRUE(r.verified);
  ASSERT_EQ(r.attempts.size(), 2u);
  EXPECT_EQ(r.attempts[0].endpoints.size(), 2u);  // two caches tried
  EXPECT_EQ(testkit::read_file(r.destination), body);
}

TEST(Download, FallsBackToProxyWhenCachesAndRedirectorDown) {
  testkit::FederationLayout layout;
  layout.caches = false;
  layout.redirector = false;
  MiniFederation fed(layout);
  auto body = testkit::random_bytes(2500, 3);
  auto path = fed.add_file("p.bin", body);
  TempDir out;
  auto r = download(path, out.path(), fed.client_options());
  ASSERT_TRUE(r.success) << to_json(r).dump();
  EXPECT_EQ(r.method_used, Method::proxy_http);
  EXPECT_TRUE(r.verified);
  EXPECT_EQ(r.attempts.size(), 3u);
  EXPECT_EQ(testkit::read_file(r.destination), body);
}

TEST(Download, NotFoundEverywhereExitsTwo) {
  MiniFederation fed;
  TempDir out;
  auto r = download(normalize_path("/exp1/none.bin"), out.path(), fed.client_options());
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.attempts.size(), 3u);
  EXPECT_EQ(exit_code(r), 2) << to_json(r).dump();
  EXPECT_FALSE(std::filesystem::exists(out.path() / "none.bin"));
}

TEST(Download, EverythingDownExitsFour) {
  testkit::FederationLayout layout;
  layout.caches = layout.redirector = layout.origin = layout.proxy = false;
  MiniFederation fed(layout);
  TempDir out;
  auto r = download(normalize_path("/exp1/x"), out.path(), fed.client_options());
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.attempts.size(), 3u);
  EXPECT_EQ(exit_code(r), 4);
}

TEST(Download, MethodsRestrictTheChain) {
  MiniFederation fed;
  auto path = fed.add_file("m.bin", "restricted");
  TempDir out;
  auto opt = fed.client_options();
  opt.methods = {Method::proxy_http};
  auto r = download(path, out.path(), opt);
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.method_used, Method::proxy_http);
  EXPECT_EQ(r.attempts.size(), 1u);
}

TEST(Download, EmptyFile) {
  MiniFederation fed;
  auto path = fed.add_file("empty", "");
  TempDir out;
  auto r = download(path, out.path(), fed.client_options());
  ASSERT_TRUE(r.success) << to_json(r).dump();
  EXPECT_EQ(r.bytes, 0u);
  EXPECT_TRUE(std::filesystem::exists(r.destination));
  EXPECT_EQ(std::filesystem::file_size(r.destination), 0u);
}

TEST(TransferReportJson, Fields) {
  TransferReport r;
  r.path = normalize_path("/a/b");
  r.success = true;
  r.bytes = 3;
  r.method_used = Method::direct_origin;
  r.attempts = {Attempt{Method::cache_federation, {"h:1"}, false, Errc::integrity_error, 2, "bad"},
                Attempt{Method::direct_origin, {"h:2"}, true, {}, {}, ""}};
  auto j = to_json(r);
  EXPECT_EQ(j["path"], "/a/b");
  EXPECT_EQ(j["method_used"], "direct-origin");
  EXPECT_TRUE(j["cache_status"].is_null());
  EXPECT_EQ(j["attempts"][0]["error"], "integrity-error");
  EXPECT_EQ(j["attempts"][0]["chunk_index"], 2);
  EXPECT_TRUE(j["attempts"][1]["error"].is_null());
  for (auto key : {"bytes", "duration", "lookup_seconds", "transfer_seconds", "verified"})
    EXPECT_TRUE(j.contains(key)) << key;
}
