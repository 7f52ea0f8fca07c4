#pragma once

// Remote environment stepping over TCP.
//
// Framing: every message is a 4-byte big-endian unsigned payload length
// followed by that many bytes of UTF-8 JSON. Doubles are written by the JSON
// serializer in shortest round-trip form, so values cross the wire bit-exact.
//
//   HELLO      {"kind":"HELLO","protocol_version":1,"scenario_hash":"<16 hex>"}
//   HELLO_ACK  {"kind":"HELLO_ACK","protocol_version":1,"scenario_hash":"<16 hex>"}
//   RESET      {"kind":"RESET","seed":<u64>}
//   RESET_ACK  {"kind":"RESET_ACK","observation":[...],"achieved":[x,y]}
//   STEP       {"kind":"STEP","action":[throttle,steer]}
//   STEP_ACK   {"kind":"STEP_ACK","observation":[...],"reward":r,"done":b,
//               "events":["wall_hit",...],"achieved":[x,y]}
//   ERROR      {"kind":"ERROR","code":"bad_version|bad_state|bad_payload|internal","message":"..."}
//   BYE        {"kind":"BYE"}
//
// Session state machine (server side, per connection):
//   connected --HELLO--> ready --RESET--> mid-episode --STEP(done)--> done
//   done/mid-episode --RESET--> mid-episode; BYE closes.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aircombat/common.hpp"
#include "aircombat/replay.hpp"
#include "aircombat/sim.hpp"

namespace aircombat::net {

using nlohmann::json;

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 16u << 20;

enum class Kind { Hello, HelloAck, Reset, ResetAck, Step, StepAck, Error, Bye };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Hello: return "HELLO";
    case Kind::HelloAck: return "HELLO_ACK";
    case Kind::Reset: return "RESET";
    case Kind::ResetAck: return "RESET_ACK";
    case Kind::Step: return "STEP";
    case Kind::StepAck: return "STEP_ACK";
    case Kind::Error: return "ERROR";
    case Kind::Bye: return "BYE";
  }
  return "?";
}

enum class ErrorCode { BadVersion, BadState, BadPayload, Internal };

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadVersion: return "bad_version";
    case ErrorCode::BadState: return "bad_state";
    case ErrorCode::BadPayload: return "bad_payload";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

/// Malformed frame or payload.
struct ProtocolError : Error {
  using Error::Error;
};
/// ERROR message received from the server.
struct ServerError : Error {
  ServerError(ErrorCode c, const std::string& msg)
      : Error(std::string(error_code_name(c)) + ": " + msg), code(c) {}
  ErrorCode code;
};
struct TimeoutError : Error {
  using Error::Error;
};
struct ConnectionLostError : Error {
  using Error::Error;
};

/// Flat tagged message; only the fields of `kind` are meaningful.
struct WireMessage {
  Kind kind = Kind::Bye;
  int protocol_version = kProtocolVersion;
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  sim::Observation observation;
  Vec2 achieved;
  sim::Action action;
  double reward = 0.0;
  bool done = false;
  sim::EventSet events;
  ErrorCode code = ErrorCode::Internal;
  std::string message;

  friend bool operator==(const WireMessage&, const WireMessage&) = default;

  static WireMessage hello(std::uint64_t hash) {
    WireMessage m;
    m.kind = Kind::Hello;
    m.scenario_hash = hash;
    return m;
  }
  static WireMessage reset(std::uint64_t seed) {
    WireMessage m;
    m.kind = Kind::Reset;
    m.seed = seed;
    return m;
  }
  static WireMessage step(sim::Action a) {
    WireMessage m;
    m.kind = Kind::Step;
    m.action = a;
    return m;
  }
  static WireMessage error(ErrorCode c, std::string msg) {
    WireMessage m;
    m.kind = Kind::Error;
    m.code = c;
    m.message = std::move(msg);
    return m;
  }
  static WireMessage bye() { return WireMessage{}; }
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw ProtocolError("bad hex field");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw ProtocolError("bad hex field");
  }
  return v;
}

inline std::string encode_payload(const WireMessage& m) {
  json j;
  j["kind"] = kind_name(m.kind);
  switch (m.kind) {
    case Kind::Hello:
    case Kind::HelloAck:
      j["protocol_version"] = m.protocol_version;
      j["scenario_hash"] = hex64(m.scenario_hash);
      break;
    case Kind::Reset:
      j["seed"] = m.seed;
      break;
    case Kind::ResetAck:
      j["observation"] = m.observation;
      j["achieved"] = {m.achieved.x, m.achieved.y};
      break;
    case Kind::Step:
      j["action"] = {m.action.throttle, m.action.steer};
      break;
    case Kind::StepAck:
      j["observation"] = m.observation;
      j["reward"] = m.reward;
      j["done"] = m.done;
      j["events"] = sim::event_names(m.events);
      j["achieved"] = {m.achieved.x, m.achieved.y};
      break;
    case Kind::Error:
      j["code"] = error_code_name(m.code);
      j["message"] = m.message;
      break;
    case Kind::Bye:
      break;
  }
  return j.dump();
}

inline WireMessage decode_payload(const std::string& text) {
  WireMessage m;
  try {
    const json j = json::parse(text);
    const std::string kind = j.at("kind").get<std::string>();
    auto finite_vector = [](const json& v) {
      auto out = v.get<std::vector<double>>();
      for (double d : out)
        if (!std::isfinite(d)) throw ProtocolError("non-finite number in payload");
      return out;
    };
    auto pair = [&](const json& v) {
      const auto p = finite_vector(v);
      if (p.size() != 2) throw ProtocolError("expected a pair");
      return std::make_pair(p[0], p[1]);
    };
    if (kind == "HELLO" || kind == "HELLO_ACK") {
      m.kind = kind == "HELLO" ? Kind::Hello : Kind::HelloAck;
      m.protocol_version = j.at("protocol_version").get<int>();
      m.scenario_hash = parse_hex64(j.at("scenario_hash").get<std::string>());
    } else if (kind == "RESET") {
      m.kind = Kind::Reset;
      m.seed = j.at("seed").get<std::uint64_t>();
    } else if (kind == "RESET_ACK") {
      m.kind = Kind::ResetAck;
      m.observation = finite_vector(j.at("observation"));
      auto [x, y] = pair(j.at("achieved"));
      m.achieved = {x, y};
    } else if (kind == "STEP") {
      m.kind = Kind::Step;
      auto [t, s] = pair(j.at("action"));
      m.action = {t, s};
    } else if (kind == "STEP_ACK") {
      m.kind = Kind::StepAck;
      m.observation = finite_vector(j.at("observation"));
      m.reward = j.at("reward").get<double>();
      m.done = j.at("done").get<bool>();
      m.events = sim::events_from_names(j.at("events").get<std::vector<std::string>>());
      auto [x, y] = pair(j.at("achieved"));
      m.achieved = {x, y};
    } else if (kind == "ERROR") {
      m.kind = Kind::Error;
      const auto code = j.at("code").get<std::string>();
      if (code == "bad_version") m.code = ErrorCode::BadVersion;
      else if (code == "bad_state") m.code = ErrorCode::BadState;
      else if (code == "bad_payload") m.code = ErrorCode::BadPayload;
      else if (code == "internal") m.code = ErrorCode::Internal;
      else throw ProtocolError("unknown error code '" + code + "'");
      m.message = j.at("message").get<std::string>();
    } else if (kind == "BYE") {
      m.kind = Kind::Bye;
    } else {
      throw ProtocolError("unknown message kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed payload: ") + e.what());
  } catch (const InputError& e) {
    throw ProtocolError(std::string("malformed payload: ") + e.what());
  }
  return m;
}

inline std::string encode_frame(const WireMessage& m) {
  const std::string payload = encode_payload(m);
  if (payload.size() > kMaxFrameBytes) throw ProtocolError("payload too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += payload;
  return out;
}

/// Decodes one complete frame; throws if the byte string is not exactly one
/// well-formed frame.
inline WireMessage decode_frame(const std::string& frame) {
  if (frame.size() < 4) throw ProtocolError("frame shorter than its length prefix");
  const std::uint32_t n = (static_cast<std::uint32_t>(static_cast<unsigned char>(frame[0])) << 24) |
                          (static_cast<std::uint32_t>(static_cast<unsigned char>(frame[1])) << 16) |
                          (static_cast<std::uint32_t>(static_cast<unsigned char>(frame[2])) << 8) |
                          static_cast<std::uint32_t>(static_cast<unsigned char>(frame[3]));
  if (frame.size() - 4 != n) throw ProtocolError("frame length prefix disagrees with its payload");
  return decode_payload(frame.substr(4));
}

// ---------------------------------------------------------------------------
// Sockets

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }

  static Endpoint parse(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) throw InputError("address '" + s + "' is not host:port");
    Endpoint e;
    e.host = s.substr(0, colon);
    if (e.host.empty()) e.host = "0.0.0.0";
    try {
      const int p = std::stoi(s.substr(colon + 1));
      if (p < 0 || p > 65535) throw std::out_of_range("port");
      e.port = static_cast<std::uint16_t>(p);
    } catch (const std::exception&) {
      throw InputError("address '" + s + "' has an invalid port");
    }
    return e;
  }
};

inline sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
      throw InputError("cannot resolve host '" + ep.host + "'");
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return addr;
}

using Clock = std::chrono::steady_clock;

/// Waits until fd is readable or the deadline passes.
inline void wait_readable(int fd, std::optional<Clock::time_point> deadline) {
  for (;;) {
    int timeout_ms = -1;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
      if (left <= 0) throw TimeoutError("response deadline exceeded");
      timeout_ms = static_cast<int>(std::min<long long>(left, 1 << 30));
    }
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, timeout_ms);
    if (rc > 0) return;
    if (rc == 0) throw TimeoutError("response deadline exceeded");
    if (errno != EINTR) throw ConnectionLostError(std::string("poll failed: ") + std::strerror(errno));
  }
}

inline void read_exact(int fd, char* buf, std::size_t n, std::optional<Clock::time_point> deadline) {
  std::size_t got = 0;
  while (got < n) {
    wait_readable(fd, deadline);
    const ssize_t rc = ::recv(fd, buf + got, n - got, 0);
    if (rc == 0) throw ConnectionLostError("peer closed the connection");
    if (rc < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ConnectionLostError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(rc);
  }
}

inline void write_all(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t rc = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ConnectionLostError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(rc);
  }
}

inline void send_message(int fd, const WireMessage& m) { write_all(fd, encode_frame(m)); }

/// Reads one frame. A frame whose length exceeds kMaxFrameBytes, or whose
/// payload fails to decode, raises ProtocolError.
inline WireMessage receive_message(int fd, std::optional<Clock::time_point> deadline = std::nullopt) {
  char prefix[4];
  read_exact(fd, prefix, 4, deadline);
  const std::uint32_t n = (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[0])) << 24) |
                          (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[1])) << 16) |
                          (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[2])) << 8) |
                          static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[3]));
  if (n > kMaxFrameBytes) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds the limit");
  std::string payload(n, '\0');
  read_exact(fd, payload.data(), n, deadline);
  return decode_payload(payload);
}

// ---------------------------------------------------------------------------
// Server

/// Per-connection protocol state; owns one private environment.
class ServerSession {
 public:
  explicit ServerSession(const sim::Scenario& scenario) : world_(scenario), hash_(sim::scenario_hash(scenario)) {}

  enum class State { Connected, Ready, MidEpisode, Done };

  struct Reply {
    WireMessage message;
    bool close = false;
  };

  Reply handle(const WireMessage& m) {
    switch (m.kind) {
      case Kind::Hello: {
        if (state_ != State::Connected) return {WireMessage::error(ErrorCode::BadState, "duplicate HELLO"), false};
        if (m.protocol_version != kProtocolVersion)
          return {WireMessage::error(ErrorCode::BadVersion,
                                     "server speaks protocol " + std::to_string(kProtocolVersion) + ", client sent " +
                                         std::to_string(m.protocol_version)),
                  true};
        state_ = State::Ready;
        WireMessage ack;
        ack.kind = Kind::HelloAck;
        ack.scenario_hash = hash_;
        return {ack, false};
      }
      case Kind::Reset: {
        if (state_ == State::Connected) return {WireMessage::error(ErrorCode::BadState, "RESET before HELLO"), false};
        WireMessage ack;
        ack.kind = Kind::ResetAck;
        ack.observation = world_.reset(m.seed);
        ack.achieved = world_.state().position();
        state_ = State::MidEpisode;
        return {ack, false};
      }
      case Kind::Step: {
        if (state_ != State::MidEpisode)
          return {WireMessage::error(ErrorCode::BadState,
                                     state_ == State::Done ? "STEP after the episode finished" : "STEP before RESET"),
                  false};
        const sim::StepResult r = world_.step(m.action);
        WireMessage ack;
        ack.kind = Kind::StepAck;
        ack.observation = r.observation;
        ack.reward = r.reward;
        ack.done = r.done;
        ack.events = r.events;
        ack.achieved = r.achieved;
        if (r.done) state_ = State::Done;
        return {ack, false};
      }
      case Kind::Bye:
        return {WireMessage::bye(), true};
      default:
        return {WireMessage::error(ErrorCode::BadPayload, std::string("unexpected ") + kind_name(m.kind)), false};
    }
  }

  State state() const { return state_; }

 private:
  sim::GoalWorld world_;
  std::uint64_t hash_;
  State state_ = State::Connected;
};

/// Accepts connections on a background thread; each connection is served by
/// its own thread and session. stop() closes the listener and every live
/// connection.
class EnvServer {
 public:
  EnvServer(sim::Scenario scenario, const Endpoint& bind) : scenario_(std::move(scenario)) {
    scenario_.validate();
    listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw Error(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(bind);
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error("cannot bind " + bind.str() + ": " + std::strerror(errno));
    if (::listen(listener_.fd(), 64) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    endpoint_ = {bind.host == "0.0.0.0" ? "127.0.0.1" : bind.host, ntohs(addr.sin_port)};
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  ~EnvServer() { stop(); }
  EnvServer(const EnvServer&) = delete;
  EnvServer& operator=(const EnvServer&) = delete;

  const Endpoint& endpoint() const { return endpoint_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.shutdown();
    {
      std::lock_guard lock(mu_);
      for (auto& c : connections_) c->socket.shutdown();
    }
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::unique_ptr<Connection>> done;
    {
      std::lock_guard lock(mu_);
      done.swap(connections_);
    }
    for (auto& c : done)
      if (c->worker.joinable()) c->worker.join();
    listener_.close();
  }

  /// Blocks until stop() is called from elsewhere.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
  }

 private:
  struct Connection {
    Socket socket;
    std::thread worker;
  };

  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        break;
      }
      auto conn = std::make_unique<Connection>();
      conn->socket = Socket(fd);
      Connection* raw = conn.get();
      conn->worker = std::thread([this, raw] { serve_connection(raw->socket.fd()); });
      connections_.push_back(std::move(conn));
    }
  }

  void serve_connection(int fd) {
    ServerSession session(scenario_);
    try {
      for (;;) {
        WireMessage request;
        try {
          request = receive_message(fd);
        } catch (const ProtocolError& e) {
          send_message(fd, WireMessage::error(ErrorCode::BadPayload, e.what()));
          break;
        }
        ServerSession::Reply reply;
        try {
          reply = session.handle(request);
        } catch (const std::exception& e) {
          reply = {WireMessage::error(ErrorCode::Internal, e.what()), true};
        }
        if (reply.message.kind != Kind::Bye) send_message(fd, reply.message);
        if (reply.close) break;
      }
    } catch (const Error&) {
      // Connection dropped; the session simply ends.
    }
    ::shutdown(fd, SHUT_RDWR);
  }

  sim::Scenario scenario_;
  Socket listener_;
  Endpoint endpoint_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::list<std::unique_ptr<Connection>> connections_;
};

// ---------------------------------------------------------------------------
// Client

struct RemoteStep {
  sim::Observation observation;
  double reward = 0.0;
  bool done = false;
  sim::EventSet events;
  Vec2 achieved;
};

class RemoteEnv {
 public:
  enum class State { Connected, Ready, MidEpisode, Done, Failed };

  /// Connects and performs the HELLO handshake. When expected_hash is set,
  /// a server running a different scenario is refused.
  RemoteEnv(const Endpoint& ep, std::chrono::milliseconds deadline = std::chrono::seconds(10),
            std::optional<std::uint64_t> expected_hash = std::nullopt, int protocol_version = kProtocolVersion)
      : deadline_(deadline) {
    socket_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!socket_.valid()) throw ConnectionLostError(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr = resolve(ep);
    if (::connect(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw ConnectionLostError("cannot connect to " + ep.str() + ": " + std::strerror(errno));
    int one = 1;
    ::setsockopt(socket_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    state_ = State::Connected;
    WireMessage hello = WireMessage::hello(expected_hash.value_or(0));
    hello.protocol_version = protocol_version;
    const WireMessage ack = request(hello, Kind::HelloAck);
    server_hash_ = ack.scenario_hash;
    if (expected_hash && *expected_hash != server_hash_) {
      state_ = State::Failed;
      throw ConfigError("server " + ep.str() + " runs a different scenario (hash " + hex64(server_hash_) + ")");
    }
    state_ = State::Ready;
  }

  ~RemoteEnv() {
    if (socket_.valid() && state_ != State::Failed) {
      try {
        send_message(socket_.fd(), WireMessage::bye());
      } catch (const Error&) {
      }
    }
  }
  RemoteEnv(RemoteEnv&&) = default;
  RemoteEnv& operator=(RemoteEnv&&) = default;

  State state() const { return state_; }
  std::uint64_t server_hash() const { return server_hash_; }

  std::pair<sim::Observation, Vec2> reset(std::uint64_t seed) {
    send_reset(seed);
    return receive_reset();
  }

  RemoteStep step(sim::Action a) {
    send_step(a);
    return receive_step();
  }

  // Split halves of reset/step so several environments can be driven in
  // lockstep: send to all, then receive from all.
  void send_reset(std::uint64_t seed) {
    require_usable();
    transmit(WireMessage::reset(seed));
    pending_ = Kind::ResetAck;
  }

  std::pair<sim::Observation, Vec2> receive_reset() {
    WireMessage m = await(Kind::ResetAck);
    state_ = State::MidEpisode;
    return {std::move(m.observation), m.achieved};
  }

  void send_step(sim::Action a) {
    require_usable();
    transmit(WireMessage::step(a));
    pending_ = Kind::StepAck;
  }

  RemoteStep receive_step() {
    WireMessage m = await(Kind::StepAck);
    state_ = m.done ? State::Done : State::MidEpisode;
    return {std::move(m.observation), m.reward, m.done, m.events, m.achieved};
  }

 private:
  void require_usable() const {
    if (state_ == State::Failed) throw UsageError("remote session has failed");
  }

  void transmit(const WireMessage& m) {
    try {
      send_message(socket_.fd(), m);
    } catch (const Error&) {
      state_ = State::Failed;
      throw;
    }
  }

  WireMessage await(Kind expected) {
    require_usable();
    if (pending_ != expected) throw UsageError(std::string("no outstanding request awaiting ") + kind_name(expected));
    pending_.reset();
    WireMessage m;
    try {
      m = receive_message(socket_.fd(), Clock::now() + deadline_);
    } catch (const Error&) {
      state_ = State::Failed;
      throw;
    }
    if (m.kind == Kind::Error) {
      // A bad_state reply leaves the session usable; anything else does not.
      if (m.code != ErrorCode::BadState) state_ = State::Failed;
      throw ServerError(m.code, m.message);
    }
    if (m.kind != expected) {
      state_ = State::Failed;
      throw ProtocolError(std::string("expected ") + kind_name(expected) + ", got " + kind_name(m.kind));
    }
    return m;
  }

  WireMessage request(const WireMessage& m, Kind expected) {
    transmit(m);
    pending_ = expected;
    return await(expected);
  }

  Socket socket_;
  std::chrono::milliseconds deadline_;
  State state_ = State::Connected;
  std::optional<Kind> pending_;
  std::uint64_t server_hash_ = 0;
};

// ---------------------------------------------------------------------------
// Lockstep collection

/// Seeds for successive episodes of environment i: first + k * stride.
struct SeedSequence {
  std::uint64_t first = 0;
  std::uint64_t stride = 1;
  std::uint64_t at(std::uint64_t k) const { return first + k * stride; }
};

/// policy(env_index, observation, achieved_position) -> action
using Policy = std::function<sim::Action(std::size_t, const sim::Observation&, Vec2)>;

struct CollectResult {
  std::vector<std::vector<replay::Transition>> streams;  // one per environment
  std::size_t ticks_completed = 0;
  std::optional<std::size_t> failed_env;
  std::string error;

  bool ok() const { return !failed_env.has_value(); }
};

/// Drives all environments one step per tick. Each environment is reset with
/// its seed sequence at the start and whenever an episode ends. On a failure,
/// the tick in progress is discarded and the result names the failing
/// environment.
inline CollectResult vector_collect(std::vector<RemoteEnv*> envs, const Policy& policy, std::size_t ticks,
                                   const std::vector<SeedSequence>& seeds, Vec2 goal) {
  if (seeds.size() != envs.size()) throw InputError("one seed sequence per environment is required");
  const std::size_t n = envs.size();
  CollectResult result;
  result.streams.resize(n);
  std::vector<sim::Observation> obs(n);
  std::vector<Vec2> pos(n);
  std::vector<std::uint64_t> episode(n, 0);

  auto fail = [&](std::size_t i, const std::exception& e) {
    result.failed_env = i;
    result.error = e.what();
    return result;
  };

  auto reset_all = [&](const std::vector<std::size_t>& which) -> bool {
    for (std::size_t i : which) {
      try {
        envs[i]->send_reset(seeds[i].at(episode[i]));
      } catch (const std::exception& e) {
        fail(i, e);
        return false;
      }
    }
    for (std::size_t i : which) {
      try {
        auto [o, p] = envs[i]->receive_reset();
        obs[i] = std::move(o);
        pos[i] = p;
      } catch (const std::exception& e) {
        fail(i, e);
        return false;
      }
    }
    return true;
  };

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (!reset_all(all)) return result;

  std::vector<sim::Action> actions(n);
  std::vector<replay::Transition> tick(n);
  for (std::size_t t = 0; t < ticks; ++t) {
    for (std::size_t i = 0; i < n; ++i) actions[i] = policy(i, obs[i], pos[i]);
    for (std::size_t i = 0; i < n; ++i) {
      try {
        envs[i]->send_step(actions[i]);
      } catch (const std::exception& e) {
        return fail(i, e);
      }
    }
    std::vector<std::size_t> finished;
    for (std::size_t i = 0; i < n; ++i) {
      RemoteStep r;
      try {
        r = envs[i]->receive_step();
      } catch (const std::exception& e) {
        return fail(i, e);
      }
      tick[i] = replay::Transition{obs[i], goal, actions[i], r.reward, r.observation, r.done, r.events, pos[i], r.achieved};
      obs[i] = std::move(r.observation);
      pos[i] = r.achieved;
      if (r.done) {
        ++episode[i];
        finished.push_back(i);
      }
    }
    if (!finished.empty() && !reset_all(finished)) return result;
    for (std::size_t i = 0; i < n; ++i) result.streams[i].push_back(std::move(tick[i]));
    result.ticks_completed = t + 1;
  }
  return result;
}

/// In-process counterpart of vector_collect with identical seeding and
/// ordering; used as the oracle for the remote path.
inline std::vector<std::vector<replay::Transition>> local_collect(const sim::Scenario& scenario, std::size_t n_envs,
                                                                  const Policy& policy, std::size_t ticks,
                                                                  const std::vector<SeedSequence>& seeds) {
  std::vector<sim::GoalWorld> worlds(n_envs, sim::GoalWorld(scenario));
  std::vector<std::vector<replay::Transition>> streams(n_envs);
  std::vector<sim::Observation> obs(n_envs);
  std::vector<std::uint64_t> episode(n_envs, 0);
  for (std::size_t i = 0; i < n_envs; ++i) obs[i] = worlds[i].reset(seeds[i].at(0));
  for (std::size_t t = 0; t < ticks; ++t) {
    for (std::size_t i = 0; i < n_envs; ++i) {
      const Vec2 before = worlds[i].state().position();
      const sim::Action a = policy(i, obs[i], before);
      sim::StepResult r = worlds[i].step(a);
      streams[i].push_back({obs[i], scenario.goal, a, r.reward, r.observation, r.done, r.events, before, r.achieved});
      obs[i] = std::move(r.observation);
      if (r.done) obs[i] = worlds[i].reset(seeds[i].at(++episode[i]));
    }
  }
  return streams;
}

}  // namespace aircombat::net
