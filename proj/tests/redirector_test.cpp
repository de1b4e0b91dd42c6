#include <gtest/gtest.h>

#include <random>
#include <set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stashfed/error.hpp"
#include "stashfed/origin.hpp"
#include "stashfed/redirector.hpp"
#include "test_util.hpp"

using namespace stashfed;
using stashfed::testkit::TempDir;
using stashfed::testkit::write_file;

namespace {

const Endpoint kO1{"10.0.0.1", 1000};
const Endpoint kO2{"10.0.0.2", 1000};

// Probe that answers from a fixed set of (endpoint, path) pairs and records
// every origin it was asked about.
struct FakeProbe {
  std::set<std::pair<std::string, std::string>> holds;
  std::vector<Endpoint> asked;
  OriginProbe fn() {
    return [this](const Endpoint& ep, const FederationPath& p) {
      asked.push_back(ep);
      return holds.contains({ep.str(), p.str()});
    };
  }
};

}  // namespace

TEST(RegisterOrigin, IdempotentAndConflicting) {
  ManualClock clock;
  Redirector r({}, clock, [](auto&, auto&) { return true; });
  r.register_origin(normalize_path("/exp1"), kO1);
  r.register_origin(normalize_path("/exp1"), kO1);
  EXPECT_EQ(r.registry()->origins.size(), 1u);
  try {
    r.register_origin(normalize_path("/exp1"), kO2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::conflict);
  }
  r.register_origin(normalize_path("/exp1/sub"), kO2);
  EXPECT_EQ(r.registry()->origins.size(), 2u);
}

TEST(RegisterOrigin, StaleHolderCanBeReplaced) {
  ManualClock clock;
  Redirector r({}, clock, [](auto&, auto&) { return true; });
  r.register_origin(normalize_path("/exp1"), kO1);
  clock.advance(181);
  EXPECT_NO_THROW(r.register_origin(normalize_path("/exp1"), kO2));
  EXPECT_EQ(r.locate(normalize_path("/exp1/f")), kO2);
}

TEST(Locate, SingleMatch) {
  ManualClock clock;
  FakeProbe probe;
  probe.holds = {{kO1.str(), "/exp1/a/f"}};
  Redirector r({}, clock, probe.fn());
  r.register_origin(normalize_path("/exp1"), kO1);
  EXPECT_EQ(r.locate(normalize_path("/exp1/a/f")), kO1);
}

TEST(Locate, LongestPrefixWinsThenFallsBack) {
  ManualClock clock;
  FakeProbe probe;
  probe.holds = {{kO2.str(), "/exp1/sub/f"}, {kO1.str(), "/exp1/sub/g"}};
  Redirector r({}, clock, probe.fn());
  r.register_origin(normalize_path("/exp1"), kO1);
  r.register_origin(normalize_path("/exp1/sub"), kO2);
  EXPECT_EQ(r.locate(normalize_path("/exp1/sub/f")), kO2);
  // O2 says has-not, so the shorter prefix is tried next.
  probe.asked.clear();
  EXPECT_EQ(r.locate(normalize_path("/exp1/sub/g")), kO1);
  EXPECT_EQ(probe.asked, (std::vector<Endpoint>{kO2, kO1}));
}

TEST(Locate, NotFound) {
  ManualClock clock;
  FakeProbe probe;
  Redirector r({}, clock, probe.fn());
  r.register_origin(normalize_path("/exp1"), kO1);
  EXPECT_THROW(r.locate(normalize_path("/nowhere/f")), Error);
  EXPECT_TRUE(probe.asked.empty());
  try {
    r.locate(normalize_path("/exp1/missing"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_found);
  }
}

TEST(Locate, LongestPrefixMatchesBruteForceOracle) {
  std::mt19937_64 rng(17);
  const std::vector<std::string> seg{"a", "b", "exp1", "sub", "c"};
  auto random_path = [&](int max_depth) {
    std::string p;
    auto depth = 1 + rng() % max_depth;
    for (std::uint64_t i = 0; i < depth; ++i) p += "/" + seg[rng() % seg.size()];
    return normalize_path(p);
  };
  for (int trial = 0; trial < 300; ++trial) {
    ManualClock clock;
    FakeProbe probe;
    Redirector r({}, clock, probe.fn());
    std::vector<FederationPath> prefixes;
    for (int i = 0; i < 8; ++i) {
      auto p = random_path(3);
      try {
        r.register_origin(p, Endpoint{"h", static_cast<std::uint16_t>(1 + i)});
        prefixes.push_back(p);
      } catch (const Error&) {
      }
    }
    for (int q = 0; q < 20; ++q) {
      auto path = random_path(5);
      auto got = r.candidates(path);
      // Oracle: scan every registration, keep matching ones, sort by length.
      std::vector<FederationPath> want;
      for (const auto& p : prefixes)
        if (path.has_prefix(p)) want.push_back(p);
      std::sort(want.begin(), want.end(),
                [](auto& a, auto& b) { return a.str().size() > b.str().size(); });
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) ASSERT_EQ(got[i].prefix, want[i]);
      // Fan-out bound: only matching origins are probed.
      probe.asked.clear();
      EXPECT_THROW(r.locate(path), Error);
      EXPECT_EQ(probe.asked.size(), want.size());
    }
  }
}

TEST(Locate, StaleOriginsAreExcluded) {
  ManualClock clock;
  Redirector r({}, clock, [](auto&, auto&) { return true; });
  r.register_origin(normalize_path("/exp1"), kO1);
  clock.advance(179);
  EXPECT_EQ(r.locate(normalize_path("/exp1/f")), kO1);
  clock.advance(2);
  EXPECT_THROW(r.locate(normalize_path("/exp1/f")), Error);
  r.register_origin(normalize_path("/exp1"), kO1);
  EXPECT_EQ(r.locate(normalize_path("/exp1/f")), kO1);
}

TEST(CacheDirectory, RegisterAndList) {
  Redirector r({}, SystemClock::instance(), [](auto&, auto&) { return false; });
  EXPECT_TRUE(r.list_caches().empty());
  for (int i = 0; i < 9; ++i)
    r.register_cache({"cache" + std::to_string(i), {"h", static_cast<std::uint16_t>(100 + i)}, {40, -90}});
  EXPECT_EQ(r.list_caches().size(), 9u);
  r.register_cache({"cache3", {"other", 1}, {41, -91}});
  auto caches = r.list_caches();
  EXPECT_EQ(caches.size(), 9u);
  std::set<std::string> ids;
  for (auto& c : caches) ids.insert(c.cache_id);
  EXPECT_EQ(ids.size(), 9u);
  EXPECT_THROW(r.register_cache({"", {"h", 1}, {0, 0}}), Error);
}

TEST(CacheDirectory, MalformedDescriptorJson) {
  auto j = nlohmann::json{{"cache_id", "c"}, {"endpoint", "h:1"}, {"lat", 99}, {"lon", 0}};
  try {
    cache_descriptor_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_descriptor);
  }
  EXPECT_THROW(cache_descriptor_from_json(nlohmann::json{{"cache_id", "c"}}), Error);
}

TEST(HighAvailability, ReplayedStreamsAnswerIdentically) {
  ManualClock clock;
  FakeProbe probe;
  std::mt19937_64 rng(2);
  Redirector a({}, clock, probe.fn()), b({}, clock, probe.fn());
  std::vector<std::pair<FederationPath, Endpoint>> stream;
  for (int i = 0; i < 50; ++i)
    stream.push_back({normalize_path("/e" + std::to_string(rng() % 5) + "/s" + std::to_string(rng() % 3)),
                      Endpoint{"o", static_cast<std::uint16_t>(1 + rng() % 4)}});
  for (const auto& [p, e] : stream) {
    bool fa = false, fb = false;
    try { a.register_origin(p, e); } catch (const Error&) { fa = true; }
    try { b.register_origin(p, e); } catch (const Error&) { fb = true; }
    ASSERT_EQ(fa, fb);
  }
  for (const auto& [p, e] : stream) probe.holds.insert({e.str(), p.str() + "/f"});
  for (const auto& [p, e] : stream) {
    auto path = p.join("f");
    std::string ra, rb;
    try { ra = a.locate(path).str(); } catch (const Error&) { ra = "404"; }
    try { rb = b.locate(path).str(); } catch (const Error&) { rb = "404"; }
    EXPECT_EQ(ra, rb);
  }
}

TEST(RedirectorHttp, TwoOriginsLongestPrefix) {
  TempDir d1, d2;
  write_file(d1 / "a/f", "one");
  write_file(d1 / "sub/g", "only-in-o1");
  write_file(d2 / "f", "two");

  RedirectorServer redirector;
  redirector.start();
  OriginConfig c1{normalize_path("/exp1"), d1.path(), {"127.0.0.1", 0}, {redirector.endpoint()}};
  OriginConfig c2{normalize_path("/exp1/sub"), d2.path(), {"127.0.0.1", 0}, {redirector.endpoint()}};
  OriginServer o1(c1), o2(c2);
  o1.start();
  o2.start();

  RedirectorClient client({redirector.endpoint()});
  EXPECT_EQ(client.locate(normalize_path("/exp1/a/f")), o1.endpoint());
  EXPECT_EQ(client.locate(normalize_path("/exp1/sub/f")), o2.endpoint());
  EXPECT_EQ(client.locate(normalize_path("/exp1/sub/g")), o1.endpoint());
  EXPECT_THROW(client.locate(normalize_path("/nowhere/f")), Error);

  httplib::Client http(redirector.endpoint().host, redirector.endpoint().port);
  auto conflict = http.Post("/register/origin",
                            nlohmann::json{{"prefix", "/exp1"}, {"endpoint", "1.2.3.4:5"}}.dump(),
                            "application/json");
  EXPECT_EQ(conflict->status, 409);
  auto bad = http.Post("/register/cache",
                       nlohmann::json{{"cache_id", "c"}, {"endpoint", "h:1"}, {"lat", 99}, {"lon", 0}}.dump(),
                       "application/json");
  EXPECT_EQ(bad->status, 400);

  EXPECT_EQ(client.register_cache({"chicago", {"127.0.0.1", 9}, {41.8781, -87.6298}}), 1u);
  auto caches = client.list_caches();
  ASSERT_EQ(caches.size(), 1u);
  EXPECT_EQ(caches[0].cache_id, "chicago");
}

TEST(RedirectorClientTest, FailsOverOnConnectionError) {
  TempDir d;
  write_file(d / "f", "x");
  RedirectorServer redirector;
  redirector.start();
  OriginServer origin({normalize_path("/exp1"), d.path(), {"127.0.0.1", 0}, {redirector.endpoint()}});
  origin.start();
  // First endpoint is a closed port.
  RedirectorClient client({{"127.0.0.1", 1}, redirector.endpoint()}, 0.5);
  EXPECT_EQ(client.locate(normalize_path("/exp1/f")), origin.endpoint());
  RedirectorClient dead({{"127.0.0.1", 1}}, 0.5);
  try {
    dead.locate(normalize_path("/exp1/f"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::origin_unreachable);
  }
}
