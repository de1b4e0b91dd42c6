#include "stashfed/monitoring.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stashfed/clock.hpp"
#include "stashfed/error.hpp"
#include "stashfed/http_host.hpp"

namespace stashfed {

std::string_view auth_name(AuthMethod m) noexcept {
  switch (m) {
    case AuthMethod::none: return "none";
    case AuthMethod::http: return "http";
    case AuthMethod::federation: return "federation";
  }
  return "none";
}

namespace {

AuthMethod auth_from_name(std::string_view s) {
  if (s == "http") return AuthMethod::http;
  if (s == "federation") return AuthMethod::federation;
  if (s == "none") return AuthMethod::none;
  throw Error(Errc::invalid_argument, "unknown auth method " + std::string(s));
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v >> 32));
    u32(static_cast<std::uint32_t>(v));
  }
  void text(std::string_view s) {
    u16(static_cast<std::uint16_t>(s.size()));
    out_.append(s);
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint16_t u16() {
    auto hi = u8();
    return static_cast<std::uint16_t>((hi << 8) | u8());
  }
  std::uint32_t u32() {
    auto hi = u16();
    return (static_cast<std::uint32_t>(hi) << 16) | u16();
  }
  std::uint64_t u64() {
    auto hi = u32();
    return (static_cast<std::uint64_t>(hi) << 32) | u32();
  }
  std::string text() {
    auto n = u16();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(Errc::malformed_packet, "short payload");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

// Longest prefix of s that fits `budget` bytes without splitting a UTF-8
// sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t budget) {
  if (s.size() <= budget) return s;
  std::size_t n = budget;
  while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  return s.substr(0, n);
}

constexpr std::size_t kLoginFixed = 4 + 1 + 1 + 2;
constexpr std::size_t kOpenFixed = 4 + 4 + 8 + 2;
constexpr std::size_t kClosePayload = 4 + 8 + 8 + 4 + 4;

}  // namespace

std::string encode_packet(const MonitorEvent& event) {
  if (event.server_id == 0) throw Error(Errc::unencodable, "server_id must be nonzero");
  Writer payload;
  bool truncated = false;
  auto fit_text = [&](std::string_view s, std::size_t fixed) {
    if (s.size() > kMaxTextInput) throw Error(Errc::unencodable, "text field exceeds 64 KiB");
    auto cut = utf8_prefix(s, kMaxPacketSize - kPacketHeaderSize - fixed);
    if (cut.size() != s.size()) truncated = true;
    payload.text(cut);
  };

  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, LoginInfo>) {
          if (b.user_id == 0) throw Error(Errc::unencodable, "user_id must be nonzero");
          if (b.ip_version != 4 && b.ip_version != 6) throw Error(Errc::unencodable, "ip_version");
          payload.u32(b.user_id);
          payload.u8(static_cast<std::uint8_t>(b.auth));
          payload.u8(b.ip_version);
          fit_text(b.hostname, kLoginFixed);
        } else if constexpr (std::is_same_v<T, OpenInfo>) {
          if (b.file_id == 0 || b.user_id == 0) throw Error(Errc::unencodable, "ids must be nonzero");
          payload.u32(b.file_id);
          payload.u32(b.user_id);
          payload.u64(b.file_size);
          fit_text(b.path, kOpenFixed);
        } else {
          if (b.file_id == 0) throw Error(Errc::unencodable, "file_id must be nonzero");
          payload.u32(b.file_id);
          payload.u64(b.bytes_read);
          payload.u64(b.bytes_written);
          payload.u32(b.read_ops);
          payload.u32(b.write_ops);
        }
      },
      event.body);

  Writer out;
  out.u8(0x53);
  out.u8(0x43);
  out.u8(static_cast<std::uint8_t>(event.kind()));
  out.u8(kPacketVersion);
  out.u8((truncated || event.truncated) ? 1 : 0);
  out.u16(static_cast<std::uint16_t>(payload.str().size()));
  out.u32(event.server_id);
  out.u64(event.timestamp);
  out.str() += payload.str();
  return std::move(out.str());
}

MonitorEvent decode_packet(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kPacketHeaderSize) throw Error(Errc::malformed_packet, "short header");
  if (r.u8() != 0x53 || r.u8() != 0x43) throw Error(Errc::malformed_packet, "bad magic");
  const auto kind = r.u8();
  if (kind < 1 || kind > 3) throw Error(Errc::malformed_packet, "bad kind");
  if (r.u8() != kPacketVersion) throw Error(Errc::malformed_packet, "bad version");
  const auto flags = r.u8();
  if (flags & ~1u) throw Error(Errc::malformed_packet, "bad flags");
  const auto length = r.u16();
  MonitorEvent ev;
  ev.server_id = r.u32();
  ev.timestamp = r.u64();
  ev.truncated = flags & 1u;
  if (ev.server_id == 0) throw Error(Errc::malformed_packet, "zero server_id");
  if (r.remaining() != length) throw Error(Errc::malformed_packet, "payload length mismatch");

  switch (static_cast<EventKind>(kind)) {
    case EventKind::login: {
      LoginInfo b;
      b.user_id = r.u32();
      auto auth = r.u8();
      if (auth > 2) throw Error(Errc::malformed_packet, "bad auth method");
      b.auth = static_cast<AuthMethod>(auth);
      b.ip_version = r.u8();
      if (b.ip_version != 4 && b.ip_version != 6) throw Error(Errc::malformed_packet, "bad ip version");
      b.hostname = r.text();
      if (b.user_id == 0) throw Error(Errc::malformed_packet, "zero user_id");
      ev.body = std::move(b);
      break;
    }
    case EventKind::open: {
      OpenInfo b;
      b.file_id = r.u32();
      b.user_id = r.u32();
      b.file_size = r.u64();
      b.path = r.text();
      if (b.file_id == 0 || b.user_id == 0) throw Error(Errc::malformed_packet, "zero id");
      ev.body = std::move(b);
      break;
    }
    case EventKind::close: {
      CloseInfo b;
      b.file_id = r.u32();
      b.bytes_read = r.u64();
      b.bytes_written = r.u64();
      b.read_ops = r.u32();
      b.write_ops = r.u32();
      if (b.file_id == 0) throw Error(Errc::malformed_packet, "zero file_id");
      ev.body = b;
      break;
    }
  }
  if (r.remaining() != 0) throw Error(Errc::malformed_packet, "trailing bytes");
  if (bytes.size() > kMaxPacketSize) throw Error(Errc::malformed_packet, "oversized packet");
  return ev;
}

// ---------------------------------------------------------------- records

nlohmann::json to_json(const TransferRecord& r) {
  auto opt = [](const auto& v) -> nlohmann::json {
    if (!v) return nullptr;
    return *v;
  };
  nlohmann::ordered_json j;
  j["server_id"] = r.server_id;
  j["path"] = opt(r.path);
  j["file_size"] = opt(r.file_size);
  j["host"] = opt(r.hostname);
  j["auth"] = r.auth ? nlohmann::json(std::string(auth_name(*r.auth))) : nlohmann::json(nullptr);
  j["ipv"] = opt(r.ip_version);
  j["bytes_read"] = r.bytes_read;
  j["bytes_written"] = r.bytes_written;
  j["read_ops"] = r.read_ops;
  j["write_ops"] = r.write_ops;
  j["open_ts"] = opt(r.open_time);
  j["close_ts"] = r.close_time;
  j["complete"] = r.complete;
  return j;
}

TransferRecord transfer_record_from_json(const nlohmann::json& j) {
  TransferRecord r;
  auto get_opt = [&](const char* k, auto& out) {
    const auto& v = j.at(k);
    if (!v.is_null()) out = v.get<typename std::decay_t<decltype(out)>::value_type>();
  };
  r.server_id = j.at("server_id").get<std::uint32_t>();
  get_opt("path", r.path);
  get_opt("file_size", r.file_size);
  get_opt("host", r.hostname);
  if (!j.at("auth").is_null()) r.auth = auth_from_name(j.at("auth").get<std::string>());
  get_opt("ipv", r.ip_version);
  r.bytes_read = j.at("bytes_read").get<std::uint64_t>();
  r.bytes_written = j.at("bytes_written").get<std::uint64_t>();
  r.read_ops = j.at("read_ops").get<std::uint32_t>();
  r.write_ops = j.at("write_ops").get<std::uint32_t>();
  get_opt("open_ts", r.open_time);
  r.close_time = j.at("close_ts").get<std::uint64_t>();
  r.complete = j.at("complete").get<bool>();
  return r;
}

// ---------------------------------------------------------------- collector

Collector::Collector(EmitFn emit, CollectorConfig config) : emit_(std::move(emit)), config_(config) {}

void Collector::ingest_datagram(std::string_view bytes, double now) {
  MonitorEvent ev;
  try {
    ev = decode_packet(bytes);
  } catch (const Error&) {
    ++counters_.malformed;
    return;
  }
  ingest(ev, now);
}

void Collector::ingest(const MonitorEvent& event, double now) {
  sweep(now);
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, LoginInfo>)
          on_login(event.server_id, b, now);
        else if constexpr (std::is_same_v<T, OpenInfo>)
          on_open(event.server_id, event.timestamp, b, now);
        else
          on_close(event.server_id, event.timestamp, b, now);
      },
      event.body);
}

void Collector::on_login(std::uint32_t server, const LoginInfo& info, double now) {
  const auto lk = key(server, info.user_id);
  const double expires = now + config_.login_ttl;
  logins_.insert_or_assign(lk, Login{info, expires});
  login_expiry_.emplace_back(expires, lk);
  // A late login may complete closes that were waiting on it.
  auto waiting = awaiting_login_.extract(lk);
  if (waiting.empty()) return;
  for (auto fk : waiting.mapped()) {
    auto p = pending_.find(fk);
    if (p == pending_.end()) continue;
    auto pending = p->second;
    if (try_complete(fk, pending, now)) pending_.erase(fk);
  }
}

void Collector::on_open(std::uint32_t server, std::uint64_t ts, const OpenInfo& info, double now) {
  const auto fk = key(server, info.file_id);
  if (retired_.contains(fk)) {
    // The transfer was already emitted without it.
    ++counters_.orphan_opens;
    return;
  }
  if (opens_.contains(fk)) {
    ++counters_.duplicates;
    return;
  }
  opens_.emplace(fk, Open{info, ts, now + config_.open_ttl});
  open_expiry_.emplace_back(now + config_.open_ttl, fk);
  auto p = pending_.find(fk);
  if (p != pending_.end()) {
    auto pending = p->second;
    if (try_complete(fk, pending, now))
      pending_.erase(fk);
    else
      await_login(fk, pending);
  }
}

void Collector::on_close(std::uint32_t server, std::uint64_t ts, const CloseInfo& info, double now) {
  const auto fk = key(server, info.file_id);
  if (retired_.contains(fk) || pending_.contains(fk)) {
    ++counters_.duplicates;
    return;
  }
  Pending p{info, server, ts, now + config_.grace_period};
  if (try_complete(fk, p, now)) return;
  pending_.emplace(fk, p);
  deadlines_.emplace_back(p.deadline, fk);
  if (opens_.contains(fk)) await_login(fk, p);
}

void Collector::await_login(std::uint64_t fk, const Pending& close) {
  auto o = opens_.find(fk);
  if (o != opens_.end()) awaiting_login_[key(close.server_id, o->second.info.user_id)].push_back(fk);
}

bool Collector::try_complete(std::uint64_t fk, const Pending& close, double now) {
  auto o = opens_.find(fk);
  if (o == opens_.end()) return false;
  if (!logins_.contains(key(close.server_id, o->second.info.user_id))) return false;
  emit_pending(fk, close, now);
  return true;
}

void Collector::emit_pending(std::uint64_t fk, const Pending& close, double now) {
  TransferRecord r;
  r.server_id = close.server_id;
  r.file_id = close.info.file_id;
  r.bytes_read = close.info.bytes_read;
  r.bytes_written = close.info.bytes_written;
  r.read_ops = close.info.read_ops;
  r.write_ops = close.info.write_ops;
  r.close_time = close.timestamp;

  bool have_open = false, have_login = false;
  if (auto o = opens_.find(fk); o != opens_.end()) {
    have_open = true;
    r.path = o->second.info.path;
    r.file_size = o->second.info.file_size;
    r.open_time = o->second.timestamp;
    if (auto l = logins_.find(key(close.server_id, o->second.info.user_id)); l != logins_.end()) {
      have_login = true;
      r.hostname = l->second.info.hostname;
      r.auth = l->second.info.auth;
      r.ip_version = l->second.info.ip_version;
    } else if (auto w = awaiting_login_.find(key(close.server_id, o->second.info.user_id));
               w != awaiting_login_.end()) {
      std::erase(w->second, fk);
      if (w->second.empty()) awaiting_login_.erase(w);
    }
    opens_.erase(o);
  }
  r.complete = have_open && have_login;
  if (!have_open) ++counters_.orphan_closes;
  retired_.insert_or_assign(fk, now + config_.open_ttl);
  retired_expiry_.emplace_back(now + config_.open_ttl, fk);
  ++counters_.emitted;
  if (r.complete) ++counters_.complete;
  emit_(r);
}

void Collector::sweep(double now) {
  while (!deadlines_.empty() && deadlines_.front().first <= now) {
    auto [deadline, fk] = deadlines_.front();
    deadlines_.pop_front();
    auto p = pending_.find(fk);
    if (p == pending_.end() || p->second.deadline != deadline) continue;
    auto pending = p->second;
    pending_.erase(p);
    emit_pending(fk, pending, now);
  }
  while (!login_expiry_.empty() && login_expiry_.front().first <= now) {
    auto [expires, lk] = login_expiry_.front();
    login_expiry_.pop_front();
    if (auto l = logins_.find(lk); l != logins_.end() && l->second.expires == expires) logins_.erase(l);
  }
  while (!open_expiry_.empty() && open_expiry_.front().first <= now) {
    auto [expires, fk] = open_expiry_.front();
    open_expiry_.pop_front();
    if (auto o = opens_.find(fk); o != opens_.end() && o->second.expires == expires) {
      opens_.erase(o);
      ++counters_.orphan_opens;
    }
  }
  while (!retired_expiry_.empty() && retired_expiry_.front().first <= now) {
    auto [expires, fk] = retired_expiry_.front();
    retired_expiry_.pop_front();
    if (auto r = retired_.find(fk); r != retired_.end() && r->second == expires) retired_.erase(r);
  }
}

void Collector::flush() {
  std::vector<std::pair<std::uint64_t, Pending>> all(pending_.begin(), pending_.end());
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.second.deadline < b.second.deadline; });
  pending_.clear();
  deadlines_.clear();
  for (auto& [fk, p] : all) emit_pending(fk, p, p.deadline);
}

// ---------------------------------------------------------------- sinks

FileSink::FileSink(std::string path) : path_(std::move(path)) {}

void FileSink::write_line(const std::string& line) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(Errc::sink_unavailable, "cannot open " + path_);
  out << line << '\n';
  out.flush();
  if (!out) throw Error(Errc::sink_unavailable, "write failed on " + path_);
}

TcpSink::TcpSink(Endpoint target, double connect_timeout)
    : target_(std::move(target)), connect_timeout_(connect_timeout) {}

TcpSink::~TcpSink() { disconnect(); }

void TcpSink::disconnect() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void TcpSink::write_line(const std::string& line) {
  if (fd_ < 0) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(target_.host.c_str(), std::to_string(target_.port).c_str(), &hints, &res) != 0)
      throw Error(Errc::sink_unavailable, "cannot resolve " + target_.str());
    int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_NONBLOCK, 0);
    int rc = fd < 0 ? -1 : ::connect(fd, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      int err = 0;
      socklen_t len = sizeof(err);
      if (::poll(&p, 1, static_cast<int>(connect_timeout_ * 1000)) == 1 &&
          ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0)
        rc = 0;
    }
    if (rc != 0) {
      if (fd >= 0) ::close(fd);
      throw Error(Errc::sink_unavailable, "cannot connect to " + target_.str());
    }
    fd_ = fd;
  }
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    auto n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd_, POLLOUT, 0};
      if (::poll(&p, 1, static_cast<int>(connect_timeout_ * 1000)) == 1) continue;
    }
    if (n <= 0) {
      disconnect();
      throw Error(Errc::sink_unavailable, "send to " + target_.str() + " failed");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::unique_ptr<RecordSink> make_sink(std::string_view spec) {
  if (spec.starts_with("file:")) return std::make_unique<FileSink>(std::string(spec.substr(5)));
  if (spec.starts_with("tcp:")) return std::make_unique<TcpSink>(Endpoint::parse(spec.substr(4)));
  throw Error(Errc::invalid_argument, "sink must be file:PATH or tcp:H:P");
}

RecordEmitter::RecordEmitter(std::unique_ptr<RecordSink> sink, std::size_t queue_bound)
    : sink_(std::move(sink)), bound_(queue_bound) {}

void RecordEmitter::emit(const TransferRecord& record) {
  std::lock_guard lock(mu_);
  if (queue_.size() >= bound_) {
    ++counters_.dropped;
  } else {
    queue_.push_back(to_json(record).dump());
  }
  while (!queue_.empty()) {
    try {
      sink_->write_line(queue_.front());
    } catch (const Error&) {
      break;
    }
    queue_.pop_front();
    ++counters_.delivered;
  }
  counters_.queued = queue_.size();
}

bool RecordEmitter::flush() {
  std::lock_guard lock(mu_);
  while (!queue_.empty()) {
    try {
      sink_->write_line(queue_.front());
    } catch (const Error&) {
      break;
    }
    queue_.pop_front();
    ++counters_.delivered;
  }
  counters_.queued = queue_.size();
  return queue_.empty();
}

EmitterCounters RecordEmitter::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

// ---------------------------------------------------------------- UDP

UdpSender::UdpSender(const Endpoint& target) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(target.host.c_str(), std::to_string(target.port).c_str(), &hints, &res) != 0)
    throw Error(Errc::invalid_argument, "cannot resolve " + target.str());
  fd_ = ::socket(res->ai_family, SOCK_DGRAM, 0);
  auto* p = reinterpret_cast<const std::uint8_t*>(res->ai_addr);
  addr_.assign(p, p + res->ai_addrlen);
  ::freeaddrinfo(res);
  if (fd_ < 0) throw Error(Errc::io_error, "socket() failed");
}

UdpSender::~UdpSender() {
  if (fd_ >= 0) ::close(fd_);
}

bool UdpSender::send(std::string_view datagram) {
  return ::sendto(fd_, datagram.data(), datagram.size(), 0,
                  reinterpret_cast<const sockaddr*>(addr_.data()),
                  static_cast<socklen_t>(addr_.size())) == static_cast<ssize_t>(datagram.size());
}

MonitorEmitter::MonitorEmitter(const Endpoint& collector, std::uint32_t server_id)
    : sender_(std::make_shared<UdpSender>(collector)), server_id_(server_id) {}

void MonitorEmitter::send(MonitorEvent event) {
  if (!sender_) return;
  event.server_id = server_id_;
  event.timestamp = static_cast<std::uint64_t>(SystemClock::instance().now());
  try {
    if (sender_->send(encode_packet(event))) ++sent_;
  } catch (const Error&) {
  }
}

std::uint32_t MonitorEmitter::login(const std::string& hostname, AuthMethod auth, std::uint8_t ip_version) {
  if (!sender_) return 0;
  const auto k = std::string(auth_name(auth)) + "|" + hostname;
  {
    std::lock_guard lock(mu_);
    auto it = users_.find(k);
    if (it != users_.end()) return it->second;
  }
  const auto id = next_user_++;
  {
    std::lock_guard lock(mu_);
    auto [it, inserted] = users_.emplace(k, id);
    if (!inserted) return it->second;
  }
  send({0, 0, false, LoginInfo{id, auth, ip_version, hostname}});
  return id;
}

std::uint32_t MonitorEmitter::open(std::uint32_t user_id, const std::string& path, std::uint64_t file_size) {
  if (!sender_) return 0;
  const auto id = next_file_++;
  send({0, 0, false, OpenInfo{id, user_id, file_size, path}});
  return id;
}

void MonitorEmitter::close(std::uint32_t file_id, std::uint64_t bytes_read, std::uint32_t read_ops) {
  if (!sender_ || file_id == 0) return;
  send({0, 0, false, CloseInfo{file_id, bytes_read, 0, read_ops, 0}});
}

// ---------------------------------------------------------------- service

struct CollectorService::Impl {
  CollectorServiceConfig config;
  int udp_fd = -1;
  std::uint16_t udp_port = 0;
  HttpHost admin;
  std::unique_ptr<RecordEmitter> emitter;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<std::string, double>> inbox;
  bool stopping = false;
  std::thread receiver;
  std::thread ingester;

  mutable std::mutex stats_mu;
  CollectorCounters collector_counters;
  std::uint64_t datagrams = 0;
};

CollectorService::CollectorService(CollectorServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->emitter = std::make_unique<RecordEmitter>(make_sink(impl_->config.sink));
  impl_->admin.server().Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(stats().dump(), "application/json");
  });
}

CollectorService::~CollectorService() { stop(); }

std::uint16_t CollectorService::start() {
  auto& im = *impl_;
  im.udp_fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(im.config.udp.port);
  if (::inet_pton(AF_INET, im.config.udp.host.c_str(), &addr.sin_addr) != 1)
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  if (::bind(im.udp_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw Error(Errc::io_error, "cannot bind UDP " + im.config.udp.str());
  socklen_t len = sizeof(addr);
  ::getsockname(im.udp_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  im.udp_port = ntohs(addr.sin_port);
  im.admin.start(im.config.admin.host, im.config.admin.port);

  im.receiver = std::thread([this] {
    auto& im = *impl_;
    std::string buf(65536, '\0');
    while (true) {
      pollfd p{im.udp_fd, POLLIN, 0};
      int ready = ::poll(&p, 1, 100);
      {
        std::lock_guard lock(im.mu);
        if (im.stopping) return;
      }
      if (ready != 1) continue;
      auto n = ::recv(im.udp_fd, buf.data(), buf.size(), 0);
      if (n < 0) continue;
      {
        std::lock_guard lock(im.mu);
        im.inbox.emplace_back(buf.substr(0, static_cast<std::size_t>(n)), SystemClock::instance().now());
      }
      im.cv.notify_one();
    }
  });

  im.ingester = std::thread([this] {
    auto& im = *impl_;
    Collector collector([&im](const TransferRecord& r) { im.emitter->emit(r); }, im.config.join);
    std::unique_lock lock(im.mu);
    while (true) {
      im.cv.wait_for(lock, std::chrono::duration<double>(im.config.sweep_interval),
                     [&] { return im.stopping || !im.inbox.empty(); });
      auto batch = std::move(im.inbox);
      im.inbox.clear();
      const bool stopping = im.stopping;
      lock.unlock();
      for (auto& [bytes, at] : batch) collector.ingest_datagram(bytes, at);
      collector.sweep(SystemClock::instance().now());
      im.emitter->flush();
      {
        std::lock_guard s(im.stats_mu);
        im.collector_counters = collector.counters();
        im.datagrams += batch.size();
      }
      if (stopping) {
        collector.flush();
        im.emitter->flush();
        std::lock_guard s(im.stats_mu);
        im.collector_counters = collector.counters();
        return;
      }
      lock.lock();
    }
  });
  return im.udp_port;
}

void CollectorService::stop() {
  auto& im = *impl_;
  {
    std::lock_guard lock(im.mu);
    im.stopping = true;
  }
  im.cv.notify_all();
  if (im.receiver.joinable()) im.receiver.join();
  if (im.ingester.joinable()) im.ingester.join();
  im.admin.stop();
  if (im.udp_fd >= 0) ::close(im.udp_fd);
  im.udp_fd = -1;
}

std::uint16_t CollectorService::udp_port() const { return impl_->udp_port; }
std::uint16_t CollectorService::admin_port() const { return impl_->admin.port(); }

nlohmann::json CollectorService::stats() const {
  std::lock_guard lock(impl_->stats_mu);
  const auto& c = impl_->collector_counters;
  auto e = impl_->emitter->counters();
  return {{"datagrams", impl_->datagrams},   {"emitted", c.emitted},
          {"complete", c.complete},          {"orphan_closes", c.orphan_closes},
          {"orphan_opens", c.orphan_opens},  {"duplicates", c.duplicates},
          {"malformed", c.malformed},        {"delivered", e.delivered},
          {"dropped", e.dropped},            {"queued", e.queued}};
}

}  // namespace stashfed
