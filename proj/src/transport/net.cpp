#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>

#include "lagoon/error.hpp"
#include "lagoon/transport.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

// One direction of an in-process pipe.
struct OneWay {
  std::mutex mutex;
  std::condition_variable readable;
  std::string buffer;
  std::size_t head = 0;
  bool closed = false;

  bool write(std::string_view bytes) {
    std::lock_guard lock(mutex);
    if (closed) return false;
    buffer.append(bytes);
    readable.notify_all();
    return true;
  }

  std::size_t read(char* out, std::size_t max) {
    std::unique_lock lock(mutex);
    readable.wait(lock, [&] { return head < buffer.size() || closed; });
    if (head >= buffer.size()) return 0;  // closed and drained
    const std::size_t n = std::min(max, buffer.size() - head);
    std::memcpy(out, buffer.data() + head, n);
    head += n;
    if (head > 4096 && head * 2 > buffer.size()) {
      buffer.erase(0, head);
      head = 0;
    }
    return n;
  }

  void close() {
    std::lock_guard lock(mutex);
    closed = true;
    readable.notify_all();
  }
};

class LoopbackChannel final : public ByteChannel {
 public:
  LoopbackChannel(std::shared_ptr<OneWay> out, std::shared_ptr<OneWay> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  ~LoopbackChannel() override { close(); }

  bool write_all(std::string_view bytes) override { return out_->write(bytes); }

  std::size_t read_some(char* buf, std::size_t max) override {
    return in_->read(buf, max);
  }

  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<OneWay> out_;
  std::shared_ptr<OneWay> in_;
};

class TcpChannel final : public ByteChannel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {}

  ~TcpChannel() override {
    close();
    ::close(fd_);
  }

  bool write_all(std::string_view bytes) override {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent,
                               MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  std::size_t read_some(char* buf, std::size_t max) override {
    for (;;) {
      const ssize_t n = ::recv(fd_, buf, max, 0);
      if (n > 0) return static_cast<std::size_t>(n);
      if (n == 0) return 0;
      if (errno == EINTR) continue;
      return 0;  // reset etc. count as end of stream
    }
  }

  void close() override {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_;
  std::atomic<bool> closed_{false};
};

}  // namespace

std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>>
make_loopback_pair() {
  auto forward = std::make_shared<OneWay>();
  auto backward = std::make_shared<OneWay>();
  return {std::make_unique<LoopbackChannel>(forward, backward),
          std::make_unique<LoopbackChannel>(backward, forward)};
}

std::unique_ptr<ByteChannel> tcp_connect(const std::string& host,
                                         std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &found) != 0)
    throw Error("connect-failed", "cannot resolve '" + host + "'");
  int fd = -1;
  for (addrinfo* ai = found; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0)
    throw Error("connect-failed",
                "no route to " + host + ":" + std::to_string(port));
  return std::make_unique<TcpChannel>(fd);
}

TcpListener::TcpListener(std::uint16_t port, AcceptHandler on_accept)
    : on_accept_(std::move(on_accept)) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw Error("listen-failed", std::strerror(errno));
  const int yes = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    fd_ = -1;
    throw Error("listen-failed",
                "port " + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  thread_ = std::thread([this] {
    for (;;) {
      const int conn = ::accept(fd_, nullptr, nullptr);
      if (conn < 0) {
        if (errno == EINTR) continue;
        return;  // listener closed
      }
      on_accept_(std::make_unique<TcpChannel>(conn));
    }
  });
}

TcpListener::~TcpListener() { stop(); }

void TcpListener::stop() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
  if (thread_.joinable()) thread_.join();
}

Session::Session(std::unique_ptr<ByteChannel> channel, MessageHandler on_message,
                 ClosedHandler on_closed)
    : channel_(std::move(channel)),
      on_message_(std::move(on_message)),
      on_closed_(std::move(on_closed)),
      last_received_(std::chrono::steady_clock::now()) {
  reader_ = std::thread([this] { reader_loop(); });
  writer_ = std::thread([this] { writer_loop(); });
}

Session::~Session() {
  close();
  if (reader_.joinable()) reader_.join();
  if (writer_.joinable()) writer_.join();
}

bool Session::send(const json& msg) {
  std::string frame = encode_frame(msg.dump());
  std::lock_guard lock(mutex_);
  if (closing_) return false;
  outbox_.push_back(std::move(frame));
  wake_writer_.notify_one();
  return true;
}

void Session::close() {
  std::lock_guard lock(mutex_);
  if (closing_) return;
  closing_ = true;
  // The writer closes the channel once the outbox has drained, so a reply
  // enqueued just before close() still reaches the peer. The channel close
  // is also what unblocks the reader.
  wake_writer_.notify_one();
}

std::chrono::steady_clock::time_point Session::last_received() const {
  std::lock_guard lock(mutex_);
  return last_received_;
}

void Session::reader_loop() {
  const ByteSource source = [this](char* buf, std::size_t max) {
    return channel_->read_some(buf, max);
  };
  std::string reason;
  try {
    for (;;) {
      auto body = read_frame(source);
      if (!body) break;
      {
        std::lock_guard lock(mutex_);
        last_received_ = std::chrono::steady_clock::now();
      }
      json msg = json::parse(*body, nullptr, false);
      if (msg.is_discarded()) {
        reason = "invalid-json";
        break;
      }
      on_message_(std::move(msg));
    }
  } catch (const Error& e) {
    reason = e.code();
  } catch (const std::exception&) {
    reason = "session-error";
  }
  close();
  if (on_closed_) on_closed_(reason);
}

void Session::writer_loop() {
  for (;;) {
    std::string frame;
    {
      std::unique_lock lock(mutex_);
      wake_writer_.wait(lock, [&] { return closing_ || !outbox_.empty(); });
      if (outbox_.empty()) break;  // closing and drained
      frame = std::move(outbox_.front());
      outbox_.pop_front();
    }
    if (!channel_->write_all(frame)) break;
  }
  channel_->close();
}

}  // namespace lagoon
