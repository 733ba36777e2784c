#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

namespace lagoon {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 7421;
inline constexpr std::uint32_t kMaxFrameBytes = 16u * 1024u * 1024u;

// ---------------------------------------------------------------------------
// Framing: a 32-bit unsigned big-endian length followed by that many bytes of
// UTF-8 JSON. The empty body is legal (length 0).

// Pulls up to `max` bytes; returns the count, 0 meaning end of stream.
using ByteSource = std::function<std::size_t(char* buf, std::size_t max)>;

std::string encode_frame(std::string_view body);  // throws Error("frame-too-large")

// Reads one frame. Returns nullopt when the stream ends cleanly between
// frames. Throws Error("length-mismatch-on-eof") when the stream ends inside
// the length prefix, Error("truncated-stream") when it ends inside the body,
// and Error("frame-too-large") for an oversized declared length.
std::optional<std::string> read_frame(const ByteSource& source);

// ---------------------------------------------------------------------------
// Byte channels: a blocking duplex byte stream. The TCP and the in-process
// implementations carry identical frame bytes, so everything above this line
// behaves the same whether or not a network is involved.

class ByteChannel {
 public:
  virtual ~ByteChannel() = default;
  // Writes the whole buffer (an already-encoded frame). Returns false once
  // the channel is closed.
  virtual bool write_all(std::string_view bytes) = 0;
  // Blocking read of up to `max` bytes; 0 means the peer closed.
  virtual std::size_t read_some(char* buf, std::size_t max) = 0;
  virtual void close() = 0;
};

// Two channels joined back to back, for running the full stack in process.
std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>>
make_loopback_pair();

// Connects to host:port. Throws Error("connect-failed").
std::unique_ptr<ByteChannel> tcp_connect(const std::string& host, std::uint16_t port);

// Accept loop on one port. Each accepted connection is handed to `on_accept`
// on the listener thread; the callback takes ownership of the channel.
class TcpListener {
 public:
  using AcceptHandler = std::function<void(std::unique_ptr<ByteChannel>)>;

  // Binds and listens immediately; throws Error("listen-failed").
  TcpListener(std::uint16_t port, AcceptHandler on_accept);
  ~TcpListener();

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  AcceptHandler on_accept_;
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Session: one reader and one writer activity over a channel. Outbound
// messages are queued and framed by the writer thread; inbound frames are
// parsed and handed to the message handler on the reader thread.

class Session {
 public:
  using MessageHandler = std::function<void(nlohmann::json msg)>;
  // Called exactly once, from the reader thread, when the session ends.
  // `reason` is empty for a clean close and an error code otherwise.
  using ClosedHandler = std::function<void(const std::string& reason)>;

  Session(std::unique_ptr<ByteChannel> channel, MessageHandler on_message,
          ClosedHandler on_closed);
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // Thread-safe; returns false if the session is already closed.
  bool send(const nlohmann::json& msg);
  void close();

  // Monotonic timestamp of the most recent inbound frame (heartbeats count).
  std::chrono::steady_clock::time_point last_received() const;

  // Peer identity, filled in by the handshake owner.
  std::string peer;

 private:
  void reader_loop();
  void writer_loop();

  std::unique_ptr<ByteChannel> channel_;
  MessageHandler on_message_;
  ClosedHandler on_closed_;

  mutable std::mutex mutex_;
  std::condition_variable wake_writer_;
  std::deque<std::string> outbox_;  // pre-encoded frames
  bool closing_ = false;
  std::chrono::steady_clock::time_point last_received_;

  std::thread reader_;
  std::thread writer_;
};

// ---------------------------------------------------------------------------
// Handshake. The first frame a client sends is a hello; the server answers
// with a hello reply and either keeps or drops the connection.

struct Hello {
  int protocol_version = kProtocolVersion;
  std::string node;
  std::vector<std::string> roles;
  int capacity = 0;

  nlohmann::json to_json() const;
  static Hello from_json(const nlohmann::json& j);  // throws Error("invalid-hello")
};

struct HelloDecision {
  bool ok = false;
  std::string reason;          // error code when !ok ("version-mismatch", ...)
  std::string detail;          // human-readable amplification of the reason
  bool evict_existing = false; // same node name reconnecting: drop the old session
};

// Pure screening rule: version mismatch and a name collision with the server
// itself are rejected; a name collision with a live client session means the
// old session is evicted in favour of the new one.
HelloDecision screen_hello(const Hello& hello, const std::string& server_node,
                           const std::vector<std::string>& active_nodes);

// Heartbeat cadence and the failure threshold, shared by both ends.
struct Timing {
  std::chrono::milliseconds heartbeat{1000};
  int miss_limit = 3;

  std::chrono::milliseconds dead_after() const { return heartbeat * miss_limit; }
};

// Port selection for the server: explicit argument, else LAGOON_PORT, else
// the default. Throws Error("invalid-port") for unparsable values.
std::uint16_t resolve_port(std::optional<int> explicit_port);

}  // namespace lagoon
