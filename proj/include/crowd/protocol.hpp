#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "crowd/behavior.hpp"

namespace crowd::wire {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 4580;
inline constexpr std::uint32_t kMaxFrame = 16u * 1024u * 1024u;

enum class Tag : std::uint8_t {
  hello = 1,
  hello_ack = 2,
  tick_begin = 3,
  agent_state = 4,
  tick_end = 5,
  env_update = 6,
  spawn_event = 7,
  despawn_event = 8,
  error = 9,
  shutdown = 10,
};

enum class Mode : std::uint8_t { lockstep = 0, streaming = 1 };

struct Hello {
  std::uint16_t version = kProtocolVersion;
  Mode mode = Mode::lockstep;
  bool operator==(const Hello&) const = default;
};

struct HelloAck {
  std::uint16_t version = kProtocolVersion;
  Mode mode = Mode::lockstep;
  std::uint32_t tick_rate = 30;
  std::uint64_t start_tick = 0;
  bool operator==(const HelloAck&) const = default;
};

struct TickBegin {
  std::uint64_t tick = 0;
  std::uint32_t agent_count = 0;
  bool operator==(const TickBegin&) const = default;
};

struct AgentState {
  std::uint32_t id = 0;
  std::uint64_t tick = 0;
  float x = 0, y = 0, vx = 0, vy = 0;
  float gait_phase = 0;
  std::uint8_t anomaly = 0;
  bool operator==(const AgentState&) const = default;
};

struct TickEnd {
  std::uint64_t tick = 0;
  bool operator==(const TickEnd&) const = default;
};

enum class EnvOp : std::uint8_t {
  add_obstacle = 1,
  remove_obstacle = 2,
  open_spawn = 3,
  close_spawn = 4,
  retarget_goal = 5,
};

struct EnvUpdate {
  EnvOp op = EnvOp::add_obstacle;
  std::uint32_t id = 0;  // add_obstacle: 0 lets the server pick
  std::vector<std::array<float, 2>> polygon;
  bool operator==(const EnvUpdate&) const = default;
};

struct SpawnEvent {
  std::uint64_t tick = 0;
  std::uint32_t id = 0;
  float x = 0, y = 0;
  bool operator==(const SpawnEvent&) const = default;
};

struct DespawnEvent {
  std::uint64_t tick = 0;
  std::uint32_t id = 0;
  bool operator==(const DespawnEvent&) const = default;
};

enum class ErrorCode : std::uint16_t {
  unknown_kind = 1,
  framing = 2,
  protocol_violation = 3,
  unknown_id = 4,
  invalid_update = 5,
  version_mismatch = 6,
  malformed = 7,
};

struct Error {
  ErrorCode code = ErrorCode::protocol_violation;
  std::string detail;
  bool operator==(const Error&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

/// Alternative index + 1 equals the wire tag.
using Message = std::variant<Hello, HelloAck, TickBegin, AgentState, TickEnd, EnvUpdate, SpawnEvent, DespawnEvent,
                             Error, Shutdown>;

Tag tag_of(const Message& m);

std::vector<std::uint8_t> encode_message(const Message& m);
void encode_message(const Message& m, std::vector<std::uint8_t>& out);

/// `closed` is reported by Connection only, when the peer hangs up.
enum class DecodeStatus { message, need_more, unknown_kind, malformed, framing_error, closed };

struct Decoded {
  DecodeStatus status = DecodeStatus::need_more;
  std::optional<Message> message;
  std::size_t consumed = 0;  // bytes of the frame, 0 for need_more and framing_error
  std::uint8_t tag = 0;
  std::string detail;
};

/// Decodes one frame from the front of `bytes`.
Decoded decode_message(std::span<const std::uint8_t> bytes);

/// Incremental decoder over an arbitrary chunked byte stream.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> chunk);
  Decoded next();
  bool poisoned() const { return poisoned_; }
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
  bool poisoned_ = false;
};

enum class UpdateStatus { applied, unknown_id, invalid };

struct UpdateResult {
  UpdateStatus status = UpdateStatus::applied;
  std::string detail;
  std::uint32_t id = 0;  // id of the affected polygon or area
};

/// Applies an environment update between ticks. On failure the world is left untouched.
UpdateResult apply_env_update(WorldState& w, const EnvUpdate& u);

/// Messages describing the current tick: TICK_BEGIN, AGENT_STATE per agent, events, TICK_END.
std::vector<Message> tick_messages(const WorldState& w);

/// Blocking TCP connection carrying framed messages.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  ~Connection();
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  static Connection connect(const std::string& host, std::uint16_t port,
                            std::chrono::milliseconds timeout = std::chrono::seconds(5));

  bool open() const { return fd_ >= 0; }
  void close();

  /// False when the peer is gone.
  bool send(const Message& m);
  bool send_bytes(std::span<const std::uint8_t> bytes);

  /// Next decoded frame; need_more status on timeout, closed on disconnect.
  Decoded receive(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
  std::optional<std::chrono::milliseconds> accept_timeout;  // wait forever when empty
  bool headless_fallback = false;
  std::optional<std::uint64_t> max_ticks;  // defaults to the scenario duration
  std::function<void(std::uint16_t)> on_listening;  // bound port, useful with port 0
};

struct ServeResult {
  bool client_connected = false;
  bool headless = false;
  Mode mode = Mode::lockstep;
  std::uint64_t last_ack = 0;
  bool acked_any = false;
  std::uint64_t env_updates = 0;
  std::string error;  // empty on a clean halt
};

/// Serves one client, stepping `w` per the negotiated mode. Throws std::system_error on bind failure.
ServeResult serve(WorldState& w, const ServeOptions& options);

}  // namespace crowd::wire
