#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stashfed/endpoint.hpp"

namespace stashfed {

// Wire layout (all integers big-endian):
//   0  magic      0x53 0x43
//   2  kind       u8   1=login 2=open 3=close
//   3  version    u8   1
//   4  flags      u8   bit 0 = a text field was truncated
//   5  length     u16  payload bytes following the header
//   7  server_id  u32
//  11  timestamp  u64  seconds
//  19  payload
// login: user_id u32, auth u8, ip_version u8, hostname text
// open:  file_id u32, user_id u32, file_size u64, path text
// close: file_id u32, bytes_read u64, bytes_written u64, read_ops u32, write_ops u32
// text = u16 length + UTF-8 bytes
inline constexpr std::size_t kPacketHeaderSize = 19;
inline constexpr std::size_t kMaxPacketSize = 512;
inline constexpr std::size_t kMaxTextInput = 64 * 1024;
inline constexpr std::uint8_t kPacketVersion = 1;

enum class EventKind : std::uint8_t { login = 1, open = 2, close = 3 };
enum class AuthMethod : std::uint8_t { none = 0, http = 1, federation = 2 };

std::string_view auth_name(AuthMethod m) noexcept;

struct LoginInfo {
  std::uint32_t user_id = 0;
  AuthMethod auth = AuthMethod::none;
  std::uint8_t ip_version = 4;
  std::string hostname;
  friend bool operator==(const LoginInfo&, const LoginInfo&) = default;
};

struct OpenInfo {
  std::uint32_t file_id = 0;
  std::uint32_t user_id = 0;
  std::uint64_t file_size = 0;
  std::string path;
  friend bool operator==(const OpenInfo&, const OpenInfo&) = default;
};

struct CloseInfo {
  std::uint32_t file_id = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint32_t read_ops = 0;
  std::uint32_t write_ops = 0;
  friend bool operator==(const CloseInfo&, const CloseInfo&) = default;
};

struct MonitorEvent {
  std::uint32_t server_id = 0;
  std::uint64_t timestamp = 0;
  bool truncated = false;
  std::variant<LoginInfo, OpenInfo, CloseInfo> body;

  EventKind kind() const noexcept { return static_cast<EventKind>(body.index() + 1); }
  friend bool operator==(const MonitorEvent&, const MonitorEvent&) = default;
};

// Throws Error(unencodable) for zero ids, a bad ip_version, or a text
// field longer than kMaxTextInput. Over-long text that fits the input
// limit is cut at a UTF-8 boundary and the truncated flag is set.
std::string encode_packet(const MonitorEvent& event);

// Throws Error(malformed_packet) for anything encode_packet cannot produce.
MonitorEvent decode_packet(std::string_view bytes);

// One joined file access.
struct TransferRecord {
  std::uint32_t server_id = 0;
  std::uint32_t file_id = 0;
  std::optional<std::string> path;
  std::optional<std::uint64_t> file_size;
  std::optional<std::string> hostname;
  std::optional<AuthMethod> auth;
  std::optional<std::uint8_t> ip_version;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint32_t read_ops = 0;
  std::uint32_t write_ops = 0;
  std::optional<std::uint64_t> open_time;
  std::uint64_t close_time = 0;
  bool complete = false;

  friend bool operator==(const TransferRecord&, const TransferRecord&) = default;
};

// Field names: server_id, path, file_size, host, auth, ipv, bytes_read,
// bytes_written, read_ops, write_ops, open_ts, close_ts, complete. Unknown
// values are null.
nlohmann::json to_json(const TransferRecord& record);
TransferRecord transfer_record_from_json(const nlohmann::json& j);

struct CollectorConfig {
  double grace_period = 5.0;
  double login_ttl = 3600.0;
  double open_ttl = 86400.0;
};

struct CollectorCounters {
  std::uint64_t emitted = 0;
  std::uint64_t complete = 0;
  std::uint64_t orphan_closes = 0;
  std::uint64_t orphan_opens = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t malformed = 0;
};

// Joins login/open/close events into TransferRecords. Single-threaded:
// one ingest context owns all state. `now` is the arrival time.
class Collector {
 public:
  using EmitFn = std::function<void(const TransferRecord&)>;

  explicit Collector(EmitFn emit, CollectorConfig config = {});

  void ingest(const MonitorEvent& event, double now);
  // Decodes and ingests; malformed datagrams are counted and dropped.
  void ingest_datagram(std::string_view bytes, double now);

  // Emits pending closes whose grace period has ended and drops expired
  // logins, opens and retired ids.
  void sweep(double now);
  // Emits every pending close regardless of deadline.
  void flush();

  const CollectorCounters& counters() const noexcept { return counters_; }
  std::size_t live_logins() const noexcept { return logins_.size(); }
  std::size_t live_opens() const noexcept { return opens_.size(); }
  std::size_t pending_closes() const noexcept { return pending_.size(); }
  std::size_t retired_ids() const noexcept { return retired_.size(); }

 private:
  struct Login {
    LoginInfo info;
    double expires;
  };
  struct Open {
    OpenInfo info;
    std::uint64_t timestamp;
    double expires;
  };
  struct Pending {
    CloseInfo info;
    std::uint32_t server_id;
    std::uint64_t timestamp;
    double deadline;
  };

  static std::uint64_t key(std::uint32_t server, std::uint32_t id) {
    return (static_cast<std::uint64_t>(server) << 32) | id;
  }

  void on_login(std::uint32_t server, const LoginInfo& info, double now);
  void on_open(std::uint32_t server, std::uint64_t ts, const OpenInfo& info, double now);
  void on_close(std::uint32_t server, std::uint64_t ts, const CloseInfo& info, double now);
  // Emits if open and login are both known. Returns true when emitted.
  bool try_complete(std::uint64_t file_key, const Pending& close, double now);
  void emit_pending(std::uint64_t file_key, const Pending& close, double now);
  void await_login(std::uint64_t file_key, const Pending& close);

  EmitFn emit_;
  CollectorConfig config_;
  CollectorCounters counters_;
  std::unordered_map<std::uint64_t, Login> logins_;
  std::unordered_map<std::uint64_t, Open> opens_;
  std::unordered_map<std::uint64_t, Pending> pending_;
  std::deque<std::pair<double, std::uint64_t>> deadlines_;
  std::unordered_map<std::uint64_t, double> retired_;
  // Expiry order per map; an item is stale if the map holds a later expiry.
  std::deque<std::pair<double, std::uint64_t>> login_expiry_, open_expiry_, retired_expiry_;
  // Pending closes whose open is known, keyed by the login they wait for.
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> awaiting_login_;
};

// ---------------------------------------------------------------- sinks

class RecordSink {
 public:
  virtual ~RecordSink() = default;
  // Writes one LF-terminated line. Throws Error(sink_unavailable).
  virtual void write_line(const std::string& line) = 0;
};

class FileSink final : public RecordSink {
 public:
  explicit FileSink(std::string path);
  void write_line(const std::string& line) override;

 private:
  std::string path_;
  std::mutex mu_;
};

class TcpSink final : public RecordSink {
 public:
  explicit TcpSink(Endpoint target, double connect_timeout = 2.0);
  ~TcpSink() override;
  void write_line(const std::string& line) override;

 private:
  void disconnect();
  Endpoint target_;
  double connect_timeout_;
  int fd_ = -1;
};

// "file:PATH" or "tcp:H:P".
std::unique_ptr<RecordSink> make_sink(std::string_view spec);

struct EmitterCounters {
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t queued = 0;
};

// Serializes records to JSON lines and delivers them in order. While the
// sink is unavailable records queue up to `queue_bound`; beyond that they
// are dropped and counted.
class RecordEmitter {
 public:
  explicit RecordEmitter(std::unique_ptr<RecordSink> sink, std::size_t queue_bound = 10000);

  void emit(const TransferRecord& record);
  // Retries delivery of queued lines. Returns true when the queue is empty.
  bool flush();
  EmitterCounters counters() const;

 private:
  std::unique_ptr<RecordSink> sink_;
  std::size_t bound_;
  mutable std::mutex mu_;
  std::deque<std::string> queue_;
  EmitterCounters counters_;
};

// ---------------------------------------------------------------- UDP

class UdpSender {
 public:
  explicit UdpSender(const Endpoint& target);
  ~UdpSender();
  UdpSender(const UdpSender&) = delete;
  UdpSender& operator=(const UdpSender&) = delete;
  bool send(std::string_view datagram);

 private:
  int fd_ = -1;
  std::vector<std::uint8_t> addr_;
};

// Server-side helper that turns file accesses into login/open/close packets.
// A default-constructed emitter is disabled and does nothing.
class MonitorEmitter {
 public:
  MonitorEmitter() = default;
  MonitorEmitter(const Endpoint& collector, std::uint32_t server_id);

  bool enabled() const noexcept { return sender_ != nullptr; }

  // Returns the user id for (host, auth), sending a login the first time.
  std::uint32_t login(const std::string& hostname, AuthMethod auth, std::uint8_t ip_version);
  std::uint32_t open(std::uint32_t user_id, const std::string& path, std::uint64_t file_size);
  void close(std::uint32_t file_id, std::uint64_t bytes_read, std::uint32_t read_ops);

  std::uint64_t packets_sent() const noexcept { return sent_.load(); }

 private:
  void send(MonitorEvent event);

  std::shared_ptr<UdpSender> sender_;
  std::uint32_t server_id_ = 0;
  std::mutex mu_;
  std::unordered_map<std::string, std::uint32_t> users_;
  std::atomic<std::uint32_t> next_user_{1};
  std::atomic<std::uint32_t> next_file_{1};
  std::atomic<std::uint64_t> sent_{0};
};

struct CollectorServiceConfig {
  Endpoint udp{"127.0.0.1", 9930};
  std::string sink = "file:transfers.jsonl";
  Endpoint admin{"127.0.0.1", 0};
  CollectorConfig join;
  double sweep_interval = 1.0;
};

// UDP receiver → handoff queue → single ingest thread → emitter, plus an
// admin HTTP endpoint serving GET /stats.
class CollectorService {
 public:
  explicit CollectorService(CollectorServiceConfig config);
  ~CollectorService();

  // Returns the bound UDP port.
  std::uint16_t start();
  void stop();
  std::uint16_t udp_port() const;
  std::uint16_t admin_port() const;
  nlohmann::json stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stashfed
