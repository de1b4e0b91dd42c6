#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "monitor_oracle.hpp"
#include "stashfed/error.hpp"
#include "stashfed/monitoring.hpp"
#include "test_util.hpp"

using namespace stashfed;
using stashfed::testkit::TempDir;

namespace {

MonitorEvent login_event(std::uint32_t user, std::string host = "node1") {
  return {1, 100, false, LoginInfo{user, AuthMethod::http, 4, std::move(host)}};
}
MonitorEvent open_event(std::uint32_t file, std::uint32_t user, std::string path = "/exp1/f") {
  return {1, 101, false, OpenInfo{file, user, 5797, std::move(path)}};
}
MonitorEvent close_event(std::uint32_t file) { return {1, 102, false, CloseInfo{file, 5797, 0, 3, 0}}; }

std::uint16_t be16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>((static_cast<unsigned char>(s[at]) << 8) | static_cast<unsigned char>(s[at + 1]));
}

}  // namespace

TEST(Codec, LoginLayoutAndRoundTrip) {
  auto ev = MonitorEvent{7, 1'700'000'000, false, LoginInfo{7, AuthMethod::http, 4, "node1"}};
  auto bytes = encode_packet(ev);
  ASSERT_EQ(bytes.size(), kPacketHeaderSize + 4 + 1 + 1 + 2 + 5);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x53);
  EXPECT_EQ(static_cast<unsigned char>(bytes[1]), 0x43);
  EXPECT_EQ(bytes[2], 1);  // kind
  EXPECT_EQ(bytes[3], 1);  // version
  EXPECT_EQ(bytes[4], 0);  // flags
  EXPECT_EQ(be16(bytes, 5), bytes.size() - kPacketHeaderSize);
  EXPECT_EQ(bytes.substr(7, 4), std::string("\0\0\0\x07", 4));
  EXPECT_EQ(decode_packet(bytes), ev);
}

TEST(Codec, CloseRoundTrip) {
  auto ev = MonitorEvent{2, 5, false, CloseInfo{9, 5797, 0, 3, 0}};
  auto bytes = encode_packet(ev);
  EXPECT_EQ(bytes.size(), kPacketHeaderSize + 28);
  EXPECT_EQ(decode_packet(bytes), ev);
}

TEST(Codec, OpenRoundTrip) {
  auto ev = MonitorEvent{3, 9, false, OpenInfo{4, 5, 2'335'000'000ull, "/exp1/p95.bin"}};
  EXPECT_EQ(decode_packet(encode_packet(ev)), ev);
}

TEST(Codec, LongHostnameIsTruncated) {
  auto ev = MonitorEvent{1, 1, false, LoginInfo{1, AuthMethod::none, 6, std::string(600, 'h')}};
  auto bytes = encode_packet(ev);
  EXPECT_EQ(bytes.size(), kMaxPacketSize);
  EXPECT_EQ(bytes[4], 1);
  auto back = decode_packet(bytes);
  EXPECT_TRUE(back.truncated);
  EXPECT_EQ(std::get<LoginInfo>(back.body).hostname, std::string(kMaxPacketSize - kPacketHeaderSize - 8, 'h'));
}

TEST(Codec, TruncationBoundary) {
  const std::size_t budget = kMaxPacketSize - kPacketHeaderSize - 8;
  auto fits = MonitorEvent{1, 1, false, LoginInfo{1, AuthMethod::none, 4, std::string(budget, 'x')}};
  EXPECT_EQ(decode_packet(encode_packet(fits)), fits);
  auto over = fits;
  std::get<LoginInfo>(over.body).hostname += "x";
  EXPECT_TRUE(decode_packet(encode_packet(over)).truncated);
}

TEST(Codec, TruncationKeepsUtf8Whole) {
  // 3-byte characters: the cut must land on a character boundary.
  std::string path = "/";
  while (path.size() < 600) path += "\xe2\x82\xac";
  auto ev = MonitorEvent{1, 1, false, OpenInfo{1, 1, 1, path}};
  auto back = std::get<OpenInfo>(decode_packet(encode_packet(ev)).body).path;
  EXPECT_EQ((back.size() - 1) % 3, 0u);
  EXPECT_TRUE(path.starts_with(back));
}

TEST(Codec, UnencodableEvents) {
  auto huge = MonitorEvent{1, 1, false, OpenInfo{1, 1, 1, std::string(kMaxTextInput + 1, 'p')}};
  EXPECT_THROW(encode_packet(huge), Error);
  EXPECT_THROW(encode_packet(MonitorEvent{0, 1, false, CloseInfo{1}}), Error);
  EXPECT_THROW(encode_packet(MonitorEvent{1, 1, false, CloseInfo{0}}), Error);
  EXPECT_THROW(encode_packet(MonitorEvent{1, 1, false, LoginInfo{1, AuthMethod::none, 5, "h"}}), Error);
}

TEST(Codec, MalformedPackets) {
  auto good = encode_packet(login_event(3));
  auto expect_malformed = [](std::string bytes) {
    try {
      decode_packet(bytes);
      ADD_FAILURE() << "decoded";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::malformed_packet);
    }
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_malformed(bad_magic);
  auto bad_kind = good;
  bad_kind[2] = 4;
  expect_malformed(bad_kind);
  auto bad_version = good;
  bad_version[3] = 2;
  expect_malformed(bad_version);
  for (std::size_t n = 0; n < good.size(); ++n) expect_malformed(good.substr(0, n));
  expect_malformed(good + "x");
}

TEST(Codec, RandomRoundTrip) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    MonitorEvent ev{1 + static_cast<std::uint32_t>(rng() % 0xfffffffe), rng(), false, CloseInfo{}};
    switch (rng() % 3) {
      case 0:
        ev.body = LoginInfo{1 + static_cast<std::uint32_t>(rng() % 1000), static_cast<AuthMethod>(rng() % 3),
                            static_cast<std::uint8_t>(rng() % 2 ? 4 : 6), std::string(rng() % 400, 'a' + rng() % 26)};
        break;
      case 1:
        ev.body = OpenInfo{1 + static_cast<std::uint32_t>(rng() % 1000), 1 + static_cast<std::uint32_t>(rng() % 1000),
                           rng(), std::string(rng() % 400, 'p')};
        break;
      default:
        ev.body = CloseInfo{1 + static_cast<std::uint32_t>(rng() % 1000), rng(), rng(),
                            static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng())};
    }
    ASSERT_EQ(decode_packet(encode_packet(ev)), ev);
  }
}

TEST(Codec, FuzzNeverCrashes) {
  std::mt19937_64 rng(99);
  auto seed = encode_packet(open_event(5, 6));
  for (int i = 0; i < 50000; ++i) {
    std::string bytes = seed;
    auto flips = 1 + rng() % 4;
    for (std::uint64_t k = 0; k < flips; ++k) bytes[rng() % bytes.size()] = static_cast<char>(rng());
    if (rng() % 4 == 0) bytes.resize(rng() % (bytes.size() + 1));
    try {
      auto ev = decode_packet(bytes);
      EXPECT_EQ(encode_packet(ev).size(), bytes.size());
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::malformed_packet);
    }
  }
}

TEST(CollectorTest, HappyPathProducesCompleteRecord) {
  std::vector<TransferRecord> out;
  Collector c([&](const TransferRecord& r) { out.push_back(r); });
  c.ingest(login_event(7), 0);
  c.ingest(open_event(9, 7), 0.1);
  c.ingest(close_event(9), 0.2);
  ASSERT_EQ(out.size(), 1u);
  const auto& r = out[0];
  EXPECT_TRUE(r.complete);
  EXPECT_EQ(r.path, "/exp1/f");
  EXPECT_EQ(r.file_size, 5797u);
  EXPECT_EQ(r.hostname, "node1");
  EXPECT_EQ(r.auth, AuthMethod::http);
  EXPECT_EQ(r.ip_version, 4);
  EXPECT_EQ(r.bytes_read, 5797u);
  EXPECT_EQ(r.read_ops, 3u);
  EXPECT_EQ(r.open_time, 101u);
  EXPECT_EQ(r.close_time, 102u);
  EXPECT_EQ(c.live_opens(), 0u);
  EXPECT_EQ(c.pending_closes(), 0u);
}

TEST(CollectorTest, ReorderedCloseWaitsForOpen) {
  std::vector<TransferRecord> out;
  Collector c([&](const TransferRecord& r) { out.push_back(r); });
  c.ingest(login_event(7), 0);
  c.ingest(close_event(9), 1.0);
  EXPECT_TRUE(out.empty());
  c.ingest(open_event(9, 7), 3.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].complete);
}

TEST(CollectorTest, LateLoginCompletesPendingClose) {
  std::vector<TransferRecord> out;
  Collector c([&](const TransferRecord& r) { out.push_back(r); });
  c.ingest(open_event(9, 7), 0);
  c.ingest(close_event(9), 0.5);
  c.ingest(login_event(7), 1.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].complete);
}

TEST(CollectorTest, OrphanCloseEmittedAfterGrace) {
  std::vector<TransferRecord> out;
  Collector c([&](const TransferRecord& r) { out.push_back(r); });
  c.ingest(close_event(9), 10.0);
  c.sweep(14.9);
  EXPECT_TRUE(out.empty());
  c.sweep(15.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_FALSE(out[0].complete);
  EXPECT_FALSE(out[0].path.has_value());
  EXPECT_EQ(c.counters().orphan_closes, 1u);
  // An open that shows up after emission does not produce a second record.
  c.ingest(open_event(9, 7), 16.0);
  c.ingest(close_event(9), 16.0);
  EXPECT_EQ(out.size(), 1u);
  EXPECT_EQ(c.counters().duplicates, 1u);
}

TEST(CollectorTest, DuplicateCloseDropped) {
  std::vector<TransferRecord> out;
  Collector c([&](const TransferRecord& r) { out.push_back(r); });
  c.ingest(login_event(7), 0);
  c.ingest(open_event(9, 7), 0);
  c.ingest(close_event(9), 0);
  c.ingest(close_event(9), 0);
  EXPECT_EQ(out.size(), 1u);
  EXPECT_EQ(c.counters().duplicates, 1u);
}

TEST(CollectorTest, StateIsBoundedByTtlSweeps) {
  std::vector<TransferRecord> out;
  CollectorConfig cfg;
  Collector c([&](const TransferRecord& r) { out.push_back(r); }, cfg);
  for (std::uint32_t i = 1; i <= 100; ++i) {
    c.ingest(login_event(i), 0);
    c.ingest(open_event(i, i), 0);
  }
  EXPECT_EQ(c.live_logins(), 100u);
  c.sweep(cfg.login_ttl + 1);
  EXPECT_EQ(c.live_logins(), 0u);
  EXPECT_EQ(c.live_opens(), 100u);
  c.sweep(cfg.open_ttl + 1);
  EXPECT_EQ(c.live_opens(), 0u);
  EXPECT_EQ(c.counters().orphan_opens, 100u);
  EXPECT_TRUE(out.empty());
}

TEST(CollectorTest, MatchesOfflineJoinWithDuplicates) {
  testkit::TrafficOptions opt;
  opt.transfers = 2000;
  opt.users = 200;
  opt.reorder_fraction = 0.05;
  opt.drop_fraction = 0.02;
  opt.duplicate_fraction = 0.02;
  auto log = testkit::synthetic_traffic(opt, 5);
  std::vector<TransferRecord> got;
  Collector c([&](const TransferRecord& r) { got.push_back(r); });
  for (const auto& p : log) c.ingest(p.event, p.arrival);
  c.sweep(log.back().arrival + 10);
  auto want = testkit::offline_join(log);
  std::sort(got.begin(), got.end(), testkit::record_less);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i], want[i]) << i;
}

TEST(RecordJson, FieldNamesAndNulls) {
  TransferRecord r;
  r.server_id = 4;
  r.close_time = 9;
  auto j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  std::vector<std::string> want{"auth",       "bytes_read", "bytes_written", "close_ts", "complete",
                                "file_size",  "host",       "ipv",           "open_ts",  "path",
                                "read_ops",   "server_id",  "write_ops"};
  std::sort(want.begin(), want.end());
  EXPECT_EQ(keys, want);
  EXPECT_TRUE(j["path"].is_null());
  r.path = "/x";
  r.auth = AuthMethod::federation;
  r.ip_version = 6;
  EXPECT_EQ(transfer_record_from_json(to_json(r)), r);
}

namespace {

class FlakySink final : public RecordSink {
 public:
  bool up = true;
  std::vector<std::string> lines;
  void write_line(const std::string& line) override {
    if (!up) throw Error(Errc::sink_unavailable, "down");
    lines.push_back(line);
  }
};

}  // namespace

TEST(Emitter, FileSinkOneLinePerRecordInOrder) {
  TempDir dir;
  auto path = (dir / "out.jsonl").string();
  RecordEmitter emitter(make_sink("file:" + path));
  for (std::uint32_t i = 0; i < 1000; ++i) {
    TransferRecord r;
    r.server_id = 1;
    r.close_time = i;
    emitter.emit(r);
  }
  auto text = testkit::read_file(path);
  std::size_t lines = 0, pos = 0;
  std::uint64_t expect = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto j = nlohmann::json::parse(text.substr(pos, nl - pos));
    EXPECT_EQ(j["close_ts"], expect++);
    ++lines;
    pos = nl + 1;
  }
  EXPECT_EQ(lines, 1000u);
}

TEST(Emitter, OutageBufferedThenDelivered) {
  auto sink = std::make_unique<FlakySink>();
  auto* raw = sink.get();
  RecordEmitter emitter(std::move(sink), 16);
  raw->up = false;
  for (std::uint32_t i = 0; i < 10; ++i) {
    TransferRecord r;
    r.close_time = i;
    emitter.emit(r);
  }
  EXPECT_EQ(emitter.counters().queued, 10u);
  raw->up = true;
  EXPECT_TRUE(emitter.flush());
  ASSERT_EQ(raw->lines.size(), 10u);
  EXPECT_EQ(nlohmann::json::parse(raw->lines[3])["close_ts"], 3);
  EXPECT_EQ(emitter.counters().dropped, 0u);
}

TEST(Emitter, OverflowDropsAndCounts) {
  auto sink = std::make_unique<FlakySink>();
  auto* raw = sink.get();
  RecordEmitter emitter(std::move(sink), 4);
  raw->up = false;
  for (int i = 0; i < 10; ++i) emitter.emit(TransferRecord{});
  EXPECT_EQ(emitter.counters().dropped, 6u);
  raw->up = true;
  emitter.flush();
  EXPECT_EQ(raw->lines.size(), 4u);
}

TEST(Emitter, TcpSinkReconnects) {
  int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  socklen_t len = sizeof(addr);
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &len);
  const auto port = ntohs(addr.sin_port);
  ::close(lfd);

  // Nothing listening: records queue.
  RecordEmitter emitter(make_sink("tcp:127.0.0.1:" + std::to_string(port)));
  for (int i = 0; i < 3; ++i) emitter.emit(TransferRecord{});
  EXPECT_EQ(emitter.counters().queued, 3u);

  lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  ASSERT_EQ(::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  ::listen(lfd, 4);
  std::string received;
  std::thread reader([&] {
    int c = ::accept(lfd, nullptr, nullptr);
    char buf[4096];
    while (std::count(received.begin(), received.end(), '\n') < 3) {
      auto n = ::recv(c, buf, sizeof(buf), 0);
      if (n <= 0) break;
      received.append(buf, static_cast<std::size_t>(n));
    }
    ::close(c);
  });
  EXPECT_TRUE(emitter.flush());
  reader.join();
  ::close(lfd);
  EXPECT_EQ(std::count(received.begin(), received.end(), '\n'), 3);
}

TEST(CollectorServiceTest, UdpToFileSink) {
  TempDir dir;
  auto path = (dir / "records.jsonl").string();
  CollectorServiceConfig cfg;
  cfg.udp = {"127.0.0.1", 0};
  cfg.sink = "file:" + path;
  cfg.sweep_interval = 0.05;
  CollectorService svc(cfg);
  auto port = svc.start();

  MonitorEmitter emitter({"127.0.0.1", port}, 42);
  auto user = emitter.login("worker.example", AuthMethod::http, 4);
  EXPECT_EQ(emitter.login("worker.example", AuthMethod::http, 4), user);
  auto file = emitter.open(user, "/exp1/f", 5797);
  emitter.close(file, 5797, 2);
  UdpSender raw({"127.0.0.1", port});
  raw.send("garbage");

  for (int i = 0; i < 100; ++i) {
    if (svc.stats()["emitted"] == 1 && svc.stats()["malformed"] == 1) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  httplib::Client admin("127.0.0.1", svc.admin_port());
  auto stats = nlohmann::json::parse(admin.Get("/stats")->body);
  EXPECT_EQ(stats["emitted"], 1);
  EXPECT_EQ(stats["malformed"], 1);
  svc.stop();
  auto j = nlohmann::json::parse(testkit::read_file(path));
  EXPECT_EQ(j["path"], "/exp1/f");
  EXPECT_EQ(j["host"], "worker.example");
  EXPECT_EQ(j["server_id"], 42);
  EXPECT_EQ(j["complete"], true);
}
