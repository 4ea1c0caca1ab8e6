#include "crowd/protocol.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <system_error>
#include <thread>

namespace crowd::wire {

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    if (!ok_ || in_.size() - pos_ < n) {
      ok_ = false;
      return {};
    }
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  bool ok() const { return ok_; }
  void fail() { ok_ = false; }

 private:
  std::uint64_t get(int n) {
    if (!ok_ || in_.size() - pos_ < static_cast<std::size_t>(n)) {
      ok_ = false;
      return 0;
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

struct PayloadWriter {
  Writer& w;
  void operator()(const Hello& m) {
    w.u16(m.version);
    w.u8(static_cast<std::uint8_t>(m.mode));
  }
  void operator()(const HelloAck& m) {
    w.u16(m.version);
    w.u8(static_cast<std::uint8_t>(m.mode));
    w.u32(m.tick_rate);
    w.u64(m.start_tick);
  }
  void operator()(const TickBegin& m) {
    w.u64(m.tick);
    w.u32(m.agent_count);
  }
  void operator()(const AgentState& m) {
    w.u32(m.id);
    w.u64(m.tick);
    w.f32(m.x);
    w.f32(m.y);
    w.f32(m.vx);
    w.f32(m.vy);
    w.f32(m.gait_phase);
    w.u8(m.anomaly);
  }
  void operator()(const TickEnd& m) { w.u64(m.tick); }
  void operator()(const EnvUpdate& m) {
    w.u8(static_cast<std::uint8_t>(m.op));
    w.u32(m.id);
    w.u32(static_cast<std::uint32_t>(m.polygon.size()));
    for (const auto& v : m.polygon) {
      w.f32(v[0]);
      w.f32(v[1]);
    }
  }
  void operator()(const SpawnEvent& m) {
    w.u64(m.tick);
    w.u32(m.id);
    w.f32(m.x);
    w.f32(m.y);
  }
  void operator()(const DespawnEvent& m) {
    w.u64(m.tick);
    w.u32(m.id);
  }
  void operator()(const Error& m) {
    w.u16(static_cast<std::uint16_t>(m.code));
    w.u32(static_cast<std::uint32_t>(m.detail.size()));
    w.bytes(m.detail);
  }
  void operator()(const Shutdown&) {}
};

std::optional<Mode> mode_from(std::uint8_t v) {
  if (v > 1) return std::nullopt;
  return static_cast<Mode>(v);
}

std::optional<Message> parse_payload(Tag tag, Reader& r) {
  switch (tag) {
    case Tag::hello: {
      Hello m;
      m.version = r.u16();
      const auto mode = mode_from(r.u8());
      if (!mode) return std::nullopt;
      m.mode = *mode;
      return m;
    }
    case Tag::hello_ack: {
      HelloAck m;
      m.version = r.u16();
      const auto mode = mode_from(r.u8());
      if (!mode) return std::nullopt;
      m.mode = *mode;
      m.tick_rate = r.u32();
      m.start_tick = r.u64();
      return m;
    }
    case Tag::tick_begin: {
      TickBegin m;
      m.tick = r.u64();
      m.agent_count = r.u32();
      return m;
    }
    case Tag::agent_state: {
      AgentState m;
      m.id = r.u32();
      m.tick = r.u64();
      m.x = r.f32();
      m.y = r.f32();
      m.vx = r.f32();
      m.vy = r.f32();
      m.gait_phase = r.f32();
      m.anomaly = r.u8();
      return m;
    }
    case Tag::tick_end:
      return TickEnd{r.u64()};
    case Tag::env_update: {
      EnvUpdate m;
      const std::uint8_t op = r.u8();
      if (op < 1 || op > 5) return std::nullopt;
      m.op = static_cast<EnvOp>(op);
      m.id = r.u32();
      const std::uint32_t n = r.u32();
      if (!r.ok() || r.remaining() != static_cast<std::size_t>(n) * 8) return std::nullopt;
      m.polygon.resize(n);
      for (auto& v : m.polygon) {
        v[0] = r.f32();
        v[1] = r.f32();
      }
      return m;
    }
    case Tag::spawn_event: {
      SpawnEvent m;
      m.tick = r.u64();
      m.id = r.u32();
      m.x = r.f32();
      m.y = r.f32();
      return m;
    }
    case Tag::despawn_event: {
      DespawnEvent m;
      m.tick = r.u64();
      m.id = r.u32();
      return m;
    }
    case Tag::error: {
      Error m;
      m.code = static_cast<ErrorCode>(r.u16());
      const std::uint32_t n = r.u32();
      m.detail = r.bytes(n);
      return m;
    }
    case Tag::shutdown:
      return Shutdown{};
  }
  return std::nullopt;
}

}  // namespace

Tag tag_of(const Message& m) { return static_cast<Tag>(m.index() + 1); }

void encode_message(const Message& m, std::vector<std::uint8_t>& out) {
  const std::size_t start = out.size();
  out.insert(out.end(), {0, 0, 0, 0});
  Writer w(out);
  w.u8(static_cast<std::uint8_t>(tag_of(m)));
  std::visit(PayloadWriter{w}, m);
  const auto length = static_cast<std::uint32_t>(out.size() - start - 4);
  for (int i = 0; i < 4; ++i) out[start + i] = static_cast<std::uint8_t>(length >> (8 * i));
}

std::vector<std::uint8_t> encode_message(const Message& m) {
  std::vector<std::uint8_t> out;
  encode_message(m, out);
  return out;
}

Decoded decode_message(std::span<const std::uint8_t> bytes) {
  Decoded d;
  if (bytes.size() < 4) return d;
  const std::uint32_t length = static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
                               static_cast<std::uint32_t>(bytes[2]) << 16 |
                               static_cast<std::uint32_t>(bytes[3]) << 24;
  if (length == 0 || length > kMaxFrame) {
    d.status = DecodeStatus::framing_error;
    d.detail = "frame length " + std::to_string(length) + " outside [1, " + std::to_string(kMaxFrame) + "]";
    return d;
  }
  if (bytes.size() - 4 < length) return d;
  d.consumed = 4 + static_cast<std::size_t>(length);
  d.tag = bytes[4];
  if (d.tag < 1 || d.tag > 10) {
    d.status = DecodeStatus::unknown_kind;
    d.detail = "unknown message kind " + std::to_string(d.tag);
    return d;
  }
  Reader r(bytes.subspan(5, length - 1));
  auto msg = parse_payload(static_cast<Tag>(d.tag), r);
  if (!msg || !r.ok() || r.remaining() != 0) {
    d.status = DecodeStatus::malformed;
    d.detail = "malformed payload for kind " + std::to_string(d.tag);
    return d;
  }
  d.status = DecodeStatus::message;
  d.message = std::move(msg);
  return d;
}

void FrameDecoder::feed(std::span<const std::uint8_t> chunk) {
  if (poisoned_) return;
  if (offset_ > 0 && offset_ * 2 >= buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

Decoded FrameDecoder::next() {
  if (poisoned_) {
    Decoded d;
    d.status = DecodeStatus::framing_error;
    d.detail = "connection poisoned";
    return d;
  }
  Decoded d = decode_message(std::span<const std::uint8_t>(buffer_).subspan(offset_));
  if (d.status == DecodeStatus::framing_error) poisoned_ = true;
  offset_ += d.consumed;
  return d;
}

namespace {

bool polygon_valid(const Polygon& poly) {
  return poly.size() >= 3 && all_finite(poly) && !polygon_self_intersects(poly) &&
         std::abs(signed_area(poly)) > 0.0;
}

Polygon to_polygon(const std::vector<std::array<float, 2>>& pts) {
  Polygon poly;
  poly.reserve(pts.size());
  for (const auto& p : pts) poly.emplace_back(static_cast<double>(p[0]), static_cast<double>(p[1]));
  return poly;
}

}  // namespace

UpdateResult apply_env_update(WorldState& w, const EnvUpdate& u) {
  auto& map = w.map;
  switch (u.op) {
    case EnvOp::add_obstacle: {
      const Polygon poly = to_polygon(u.polygon);
      if (!polygon_valid(poly)) return {UpdateStatus::invalid, "obstacle polygon is invalid", u.id};
      std::uint32_t id = u.id;
      if (id == 0) {
        for (const auto& o : map.obstacles) id = std::max(id, o.id);
        ++id;
      } else if (map.obstacle(id)) {
        return {UpdateStatus::invalid, "obstacle id " + std::to_string(id) + " already in use", id};
      }
      map.obstacles.push_back({id, "update" + std::to_string(id), poly});
      std::sort(map.obstacles.begin(), map.obstacles.end(),
                [](const NamedPolygon& a, const NamedPolygon& b) { return a.id < b.id; });
      for (auto& a : w.agents)
        if (point_in_polygon(poly, a.position)) a.position = push_to_free_space(map, a.position);
      w.grid.rebuild(w.agents);
      return {UpdateStatus::applied, {}, id};
    }
    case EnvOp::remove_obstacle: {
      const auto it = std::find_if(map.obstacles.begin(), map.obstacles.end(),
                                   [&](const NamedPolygon& o) { return o.id == u.id; });
      if (it == map.obstacles.end())
        return {UpdateStatus::unknown_id, "no obstacle with id " + std::to_string(u.id), u.id};
      map.obstacles.erase(it);
      return {UpdateStatus::applied, {}, u.id};
    }
    case EnvOp::open_spawn:
    case EnvOp::close_spawn: {
      SpawnArea* area = map.spawn(u.id);
      if (!area) return {UpdateStatus::unknown_id, "no spawn area with id " + std::to_string(u.id), u.id};
      area->open = u.op == EnvOp::open_spawn;
      return {UpdateStatus::applied, {}, u.id};
    }
    case EnvOp::retarget_goal: {
      auto it = std::find_if(map.goal_areas.begin(), map.goal_areas.end(),
                             [&](const NamedPolygon& g) { return g.id == u.id; });
      if (it == map.goal_areas.end())
        return {UpdateStatus::unknown_id, "no goal area with id " + std::to_string(u.id), u.id};
      const Polygon poly = to_polygon(u.polygon);
      if (!polygon_valid(poly)) return {UpdateStatus::invalid, "goal polygon is invalid", u.id};
      it->polygon = poly;
      for (auto& a : w.agents)
        if (a.goal_area == u.id) a.goal = sample_point_in(poly, w.rng);
      return {UpdateStatus::applied, {}, u.id};
    }
  }
  return {UpdateStatus::invalid, "unknown operation", u.id};
}

std::vector<Message> tick_messages(const WorldState& w) {
  const std::uint64_t tick = w.clock.tick;
  std::vector<Message> out;
  out.reserve(w.agents.size() + 2);
  out.emplace_back(TickBegin{tick, static_cast<std::uint32_t>(w.agents.size())});
  const auto flags = anomaly_flags_at(w, tick);
  for (const auto& a : w.agents) {
    const bool flagged = std::any_of(flags.begin(), flags.end(), [&](const auto& f) { return f.first == a.id; });
    out.emplace_back(AgentState{a.id, tick, static_cast<float>(a.position.x()), static_cast<float>(a.position.y()),
                                static_cast<float>(a.velocity.x()), static_cast<float>(a.velocity.y()),
                                static_cast<float>(a.gait_phase), static_cast<std::uint8_t>(flagged ? 1 : 0)});
  }
  const auto lo = std::lower_bound(w.event_log.begin(), w.event_log.end(), tick,
                                   [](const Event& e, std::uint64_t t) { return e.tick < t; });
  for (auto it = lo; it != w.event_log.end() && it->tick == tick; ++it) {
    if (it->kind == EventKind::spawn)
      out.emplace_back(SpawnEvent{tick, it->agent_id, static_cast<float>(it->position.x()),
                                  static_cast<float>(it->position.y())});
    else if (it->kind == EventKind::despawn)
      out.emplace_back(DespawnEvent{tick, it->agent_id});
  }
  out.emplace_back(TickEnd{tick});
  return out;
}

Connection::~Connection() { close(); }

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_), decoder_(std::move(other.decoder_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    decoder_ = std::move(other.decoder_);
    other.fd_ = -1;
  }
  return *this;
}

void Connection::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Connection Connection::connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int err = 0;
  while (true) {
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
      err = errno;
      break;
    }
    if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Connection(fd);
    }
    err = errno;
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ::freeaddrinfo(res);
  throw std::system_error(err, std::generic_category(), "connect to " + host + ":" + service);
}

bool Connection::send_bytes(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

bool Connection::send(const Message& m) { return send_bytes(encode_message(m)); }

Decoded Connection::receive(std::optional<std::chrono::milliseconds> timeout) {
  const auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout
                                : std::chrono::steady_clock::time_point::max();
  std::uint8_t buf[65536];
  while (true) {
    Decoded d = decoder_.next();
    if (d.status != DecodeStatus::need_more) return d;
    int wait_ms = -1;
    if (timeout) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      wait_ms = static_cast<int>(std::max<std::int64_t>(0, left.count()));
    }
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, wait_ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) return d;
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      Decoded closed;
      closed.status = DecodeStatus::closed;
      closed.detail = "peer disconnected";
      return closed;
    }
    decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  }
}

namespace {

class Listener {
 public:
  Listener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw std::system_error(EINVAL, std::generic_category(), "invalid bind address " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 1) != 0) {
      const int err = errno;
      ::close(fd_);
      throw std::system_error(err, std::generic_category(), "bind " + host + ":" + std::to_string(port));
    }
  }
  ~Listener() { ::close(fd_); }

  std::uint16_t port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  /// Accepted socket, or -1 on timeout.
  int accept(std::optional<std::chrono::milliseconds> timeout) {
    pollfd p{fd_, POLLIN, 0};
    while (true) {
      const int rc = ::poll(&p, 1, timeout ? static_cast<int>(timeout->count()) : -1);
      if (rc < 0 && errno == EINTR) continue;
      if (rc <= 0) return -1;
      const int fd = ::accept(fd_, nullptr, nullptr);
      if (fd >= 0) {
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      }
      return fd;
    }
  }

 private:
  int fd_ = -1;
};

struct Session {
  WorldState& world;
  Connection& conn;
  ServeResult& result;
  bool finished = false;

  void fail(ErrorCode code, const std::string& detail) {
    conn.send(Error{code, detail});
    conn.send(Shutdown{});
    result.error = detail;
    finished = true;
  }

  /// Handles one incoming decode result; returns true when it acknowledged `expect`.
  bool handle(const Decoded& d, std::uint64_t expect) {
    switch (d.status) {
      case DecodeStatus::need_more:
        return false;
      case DecodeStatus::closed:
        finished = true;
        return false;
      case DecodeStatus::unknown_kind:
        conn.send(Error{ErrorCode::unknown_kind, d.detail});
        return false;
      case DecodeStatus::malformed:
        fail(ErrorCode::malformed, d.detail);
        return false;
      case DecodeStatus::framing_error:
        fail(ErrorCode::framing, d.detail);
        return false;
      case DecodeStatus::message:
        break;
    }
    const Message& m = *d.message;
    if (const auto* ack = std::get_if<TickEnd>(&m)) {
      if (ack->tick > expect || (result.mode == Mode::lockstep && ack->tick != expect)) {
        fail(ErrorCode::protocol_violation,
             "acknowledged tick " + std::to_string(ack->tick) + " while at tick " + std::to_string(expect));
        return false;
      }
      result.last_ack = ack->tick;
      result.acked_any = true;
      return ack->tick == expect;
    }
    if (const auto* u = std::get_if<EnvUpdate>(&m)) {
      const UpdateResult r = apply_env_update(world, *u);
      ++result.env_updates;
      if (r.status == UpdateStatus::unknown_id) conn.send(Error{ErrorCode::unknown_id, r.detail});
      else if (r.status == UpdateStatus::invalid) conn.send(Error{ErrorCode::invalid_update, r.detail});
      return false;
    }
    if (std::holds_alternative<Shutdown>(m)) {
      finished = true;
      return false;
    }
    if (std::holds_alternative<Error>(m)) return false;
    fail(ErrorCode::protocol_violation,
         "unexpected message kind " + std::to_string(static_cast<int>(tag_of(m))));
    return false;
  }
};

}  // namespace

ServeResult serve(WorldState& w, const ServeOptions& options) {
  ServeResult result;
  const std::uint64_t max_ticks = options.max_ticks.value_or(w.scenario ? w.scenario->duration : w.clock.tick);
  Listener listener(options.host, options.port);
  if (options.on_listening) options.on_listening(listener.port());
  const int fd = listener.accept(options.accept_timeout);
  if (fd < 0) {
    if (options.headless_fallback) {
      result.headless = true;
      run_until(w, max_ticks);
    } else {
      result.error = "no client connected";
    }
    return result;
  }
  result.client_connected = true;
  Connection conn(fd);
  Session session{w, conn, result};

  const Decoded first = conn.receive(std::chrono::seconds(30));
  if (first.status != DecodeStatus::message || !std::holds_alternative<Hello>(*first.message)) {
    if (first.status == DecodeStatus::closed) return result;
    session.fail(ErrorCode::protocol_violation, "expected HELLO");
    return result;
  }
  const auto& hello = std::get<Hello>(*first.message);
  if (hello.version != kProtocolVersion) {
    session.fail(ErrorCode::version_mismatch, "unsupported protocol version " + std::to_string(hello.version));
    return result;
  }
  result.mode = hello.mode;
  conn.send(HelloAck{kProtocolVersion, hello.mode, w.scenario ? w.scenario->tick_rate : 30u, w.clock.tick});

  std::vector<std::uint8_t> batch;
  while (!session.finished) {
    batch.clear();
    for (const auto& m : tick_messages(w)) encode_message(m, batch);
    if (!conn.send_bytes(batch)) break;
    if (w.clock.tick >= max_ticks) {
      conn.send(Shutdown{});
      break;
    }
    if (result.mode == Mode::lockstep) {
      while (!session.finished)
        if (session.handle(conn.receive(), w.clock.tick)) break;
    } else {
      while (!session.finished) {
        const Decoded d = conn.receive(std::chrono::milliseconds(0));
        if (d.status == DecodeStatus::need_more) break;
        session.handle(d, w.clock.tick);
      }
    }
    if (session.finished) break;
    step(w);
  }
  return result;
}

}  // namespace crowd::wire
