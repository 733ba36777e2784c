#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#include "helpers.hpp"
#include "lagoon/error.hpp"
#include "lagoon/packages.hpp"
#include "lagoon/rng.hpp"
#include "lagoon/transport.hpp"

using namespace lagoon;
using nlohmann::json;
using testutil::error_code_of;

namespace {

// A byte source over a memory buffer that hands out data in ragged chunks,
// so partial reads get exercised.
ByteSource chunked_source(std::string data, Rng* rng = nullptr) {
  auto state = std::make_shared<std::pair<std::string, std::size_t>>(
      std::move(data), 0);
  auto shared_rng = rng ? std::make_shared<Rng>(rng->split(17))
                        : std::shared_ptr<Rng>{};
  return [state, shared_rng](char* buf, std::size_t max) -> std::size_t {
    auto& [text, pos] = *state;
    if (pos >= text.size()) return 0;
    std::size_t n = std::min(max, text.size() - pos);
    if (shared_rng && n > 1)
      n = 1 + shared_rng->index(n);  // deliberately ragged
    std::memcpy(buf, text.data() + pos, n);
    pos += n;
    return n;
  };
}

std::string drain(ByteChannel& channel, std::size_t want) {
  std::string out(want, '\0');
  std::size_t got = 0;
  while (got < want) {
    const std::size_t n = channel.read_some(out.data() + got, want - got);
    if (n == 0) break;
    got += n;
  }
  out.resize(got);
  return out;
}

}  // namespace

TEST_CASE("empty body encodes to exactly four zero bytes") {
  const std::string frame = encode_frame("");
  REQUIRE(frame.size() == 4);
  CHECK(frame[0] == '\0');
  CHECK(frame[1] == '\0');
  CHECK(frame[2] == '\0');
  CHECK(frame[3] == '\0');
}

TEST_CASE("a two-byte JSON object encodes with a big-endian length prefix") {
  const std::string frame = encode_frame("{}");
  REQUIRE(frame.size() == 6);
  CHECK(static_cast<unsigned char>(frame[0]) == 0x00);
  CHECK(static_cast<unsigned char>(frame[1]) == 0x00);
  CHECK(static_cast<unsigned char>(frame[2]) == 0x00);
  CHECK(static_cast<unsigned char>(frame[3]) == 0x02);
  CHECK(frame[4] == '{');
  CHECK(frame[5] == '}');
}

TEST_CASE("decode inverts encode") {
  for (const std::string body :
       {std::string{""}, std::string{"{}"}, std::string{"hello"},
        std::string(100000, 'x'), std::string{"\x00\x01\xff", 3}}) {
    auto src = chunked_source(encode_frame(body));
    auto got = read_frame(src);
    REQUIRE(got.has_value());
    CHECK(*got == body);
    CHECK_FALSE(read_frame(src).has_value());  // clean end afterwards
  }
}

TEST_CASE("a stream ending between frames is a clean end") {
  auto src = chunked_source("");
  CHECK_FALSE(read_frame(src).has_value());
}

TEST_CASE("a stream ending inside the length prefix is length-mismatch-on-eof") {
  for (std::size_t cut = 1; cut <= 3; ++cut) {
    auto src = chunked_source(encode_frame("abcdef").substr(0, cut));
    CHECK(error_code_of([&] { read_frame(src); }) == "length-mismatch-on-eof");
  }
}

TEST_CASE("a declared length the stream cannot honour is truncated-stream") {
  // Header says 20 bytes, only 10 arrive.
  std::string partial = encode_frame(std::string(20, 'z')).substr(0, 4 + 10);
  auto src = chunked_source(std::move(partial));
  CHECK(error_code_of([&] { read_frame(src); }) == "truncated-stream");
}

TEST_CASE("oversized declared lengths are rejected before reading the body") {
  std::string header = {'\x7f', '\x00', '\x00', '\x01'};  // ~2 GiB declared
  auto src = chunked_source(header);
  CHECK(error_code_of([&] { read_frame(src); }) == "frame-too-large");
}

TEST_CASE("oversized bodies are rejected on the encode side") {
  std::string big(static_cast<std::size_t>(kMaxFrameBytes) + 1, 'a');
  CHECK(error_code_of([&] { encode_frame(big); }) == "frame-too-large");
}

TEST_CASE("a thousand envelopes survive framing byte-exactly") {
  Rng rng(2026);
  std::string stream;
  std::vector<std::string> bodies;
  for (int i = 0; i < 1000; ++i) {
    Envelope env;
    env.id = EnvelopeId::fresh();
    env.priority = static_cast<int>(rng.index(10));
    env.kind = PackageKind::Result;
    ResultPackage r;
    r.task_id = env.id;
    r.makespan = rng.real01() * 1000;
    r.seed = rng.next();
    r.evals = static_cast<std::int64_t>(rng.index(100000));
    r.node = "node-" + std::to_string(rng.index(4));
    env.result = r;
    const std::string body = env.to_json().dump();
    bodies.push_back(body);
    stream += encode_frame(body);
  }
  auto src = chunked_source(std::move(stream), &rng);
  for (int i = 0; i < 1000; ++i) {
    auto got = read_frame(src);
    REQUIRE(got.has_value());
    CHECK(*got == bodies[static_cast<std::size_t>(i)]);
  }
  CHECK_FALSE(read_frame(src).has_value());
}

TEST_CASE("hello records round-trip through JSON") {
  Hello h;
  h.node = "client-7";
  h.roles = {"client", "load-balancer"};
  h.capacity = 4;
  const Hello back = Hello::from_json(h.to_json());
  CHECK(back.protocol_version == kProtocolVersion);
  CHECK(back.node == "client-7");
  CHECK(back.roles == h.roles);
  CHECK(back.capacity == 4);
  CHECK(error_code_of([] { Hello::from_json(json{{"type", "hello"}}); }) ==
        "invalid-hello");
}

TEST_CASE("hello screening rejects wrong versions with a reason record") {
  Hello h;
  h.node = "client-1";
  h.protocol_version = kProtocolVersion + 1;
  const HelloDecision d = screen_hello(h, "server", {});
  CHECK_FALSE(d.ok);
  CHECK(d.reason == "version-mismatch");
  CHECK(d.detail.find(std::to_string(kProtocolVersion + 1)) != std::string::npos);
}

TEST_CASE("hello screening rejects the server's own name") {
  Hello h;
  h.node = "server";
  const HelloDecision d = screen_hello(h, "server", {"client-1"});
  CHECK_FALSE(d.ok);
  CHECK(d.reason == "duplicate-node-name");
}

TEST_CASE("hello screening evicts an old session on a reconnect") {
  Hello h;
  h.node = "client-1";
  const HelloDecision d = screen_hello(h, "server", {"client-1", "client-2"});
  CHECK(d.ok);
  CHECK(d.evict_existing);
  const HelloDecision fresh = screen_hello(h, "server", {"client-2"});
  CHECK(fresh.ok);
  CHECK_FALSE(fresh.evict_existing);
}

TEST_CASE("port selection prefers the explicit argument, then the environment") {
  ::unsetenv("LAGOON_PORT");
  CHECK(resolve_port(std::nullopt) == kDefaultPort);
  CHECK(resolve_port(9000) == 9000);
  ::setenv("LAGOON_PORT", "8123", 1);
  CHECK(resolve_port(std::nullopt) == 8123);
  CHECK(resolve_port(9000) == 9000);  // argument still wins
  ::setenv("LAGOON_PORT", "not-a-port", 1);
  CHECK(error_code_of([] { resolve_port(std::nullopt); }) == "invalid-port");
  ::setenv("LAGOON_PORT", "70000", 1);
  CHECK(error_code_of([] { resolve_port(std::nullopt); }) == "invalid-port");
  ::unsetenv("LAGOON_PORT");
  CHECK(error_code_of([] { resolve_port(0); }) == "invalid-port");
}

TEST_CASE("the in-process pair and a real socket carry identical bytes") {
  const std::vector<std::string> bodies = {"", "{}", R"({"k":[1,2,3]})",
                                           std::string(5000, 'q')};
  std::string wire;
  for (const auto& b : bodies) wire += encode_frame(b);

  // In-process channel.
  auto [a, b] = make_loopback_pair();
  REQUIRE(a->write_all(wire));
  a->close();
  const std::string via_loopback = drain(*b, wire.size() + 1);

  // Real TCP through the loopback interface.
  std::mutex mutex;
  std::condition_variable ready;
  std::unique_ptr<ByteChannel> accepted;
  TcpListener listener(0, [&](std::unique_ptr<ByteChannel> ch) {
    std::lock_guard lock(mutex);
    accepted = std::move(ch);
    ready.notify_one();
  });
  auto client = tcp_connect("127.0.0.1", listener.port());
  {
    std::unique_lock lock(mutex);
    REQUIRE(ready.wait_for(lock, std::chrono::seconds(5),
                           [&] { return accepted != nullptr; }));
  }
  REQUIRE(client->write_all(wire));
  client->close();
  const std::string via_tcp = drain(*accepted, wire.size() + 1);

  CHECK(via_loopback == wire);
  CHECK(via_tcp == wire);
  CHECK(via_loopback == via_tcp);
}

TEST_CASE("sessions deliver messages in order and report a clean close") {
  auto [a, b] = make_loopback_pair();
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<int> received;
  std::string close_reason{"unset"};
  bool closed = false;

  Session right(std::move(b),
                [&](json msg) {
                  std::lock_guard lock(mutex);
                  received.push_back(msg.at("n").get<int>());
                  cv.notify_one();
                },
                [&](const std::string& reason) {
                  std::lock_guard lock(mutex);
                  close_reason = reason;
                  closed = true;
                  cv.notify_one();
                });
  {
    Session left(std::move(a), [](json) {}, [](const std::string&) {});
    for (int i = 0; i < 50; ++i) REQUIRE(left.send({{"n", i}}));
    std::unique_lock lock(mutex);
    REQUIRE(cv.wait_for(lock, std::chrono::seconds(5),
                        [&] { return received.size() == 50; }));
  }  // left closes here
  std::unique_lock lock(mutex);
  REQUIRE(cv.wait_for(lock, std::chrono::seconds(5), [&] { return closed; }));
  CHECK(close_reason.empty());
  for (int i = 0; i < 50; ++i) CHECK(received[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("a stream cut inside a frame surfaces the framing error") {
  auto [a, b] = make_loopback_pair();
  std::mutex mutex;
  std::condition_variable cv;
  std::string close_reason;
  bool closed = false;
  Session right(std::move(b), [](json) {},
                [&](const std::string& reason) {
                  std::lock_guard lock(mutex);
                  close_reason = reason;
                  closed = true;
                  cv.notify_one();
                });
  // Half a frame: full header declaring 100 bytes, then silence.
  std::string partial = encode_frame(std::string(100, 'y')).substr(0, 30);
  REQUIRE(a->write_all(partial));
  a->close();
  std::unique_lock lock(mutex);
  REQUIRE(cv.wait_for(lock, std::chrono::seconds(5), [&] { return closed; }));
  CHECK(close_reason == "truncated-stream");
}

TEST_CASE("concurrent sessions never leak messages across each other") {
  std::mutex mutex;
  std::condition_variable cv;
  struct ServerSide {
    std::unique_ptr<Session> session;
    std::vector<std::string> seen;
  };
  std::vector<std::unique_ptr<ServerSide>> sides;

  TcpListener listener(0, [&](std::unique_ptr<ByteChannel> ch) {
    std::lock_guard lock(mutex);
    auto side = std::make_unique<ServerSide>();
    ServerSide* raw = side.get();
    side->session = std::make_unique<Session>(
        std::move(ch),
        [&, raw](json msg) {
          std::lock_guard inner(mutex);
          raw->seen.push_back(msg.at("from").get<std::string>());
          // Echo back so the client can also verify isolation.
          raw->session->send({{"echo", msg.at("from")}});
          cv.notify_all();
        },
        [](const std::string&) {});
    sides.push_back(std::move(side));
  });

  constexpr int kClients = 4;
  constexpr int kEach = 25;
  std::vector<std::unique_ptr<Session>> clients;
  std::vector<std::vector<std::string>> echoes(kClients);
  for (int c = 0; c < kClients; ++c) {
    clients.push_back(std::make_unique<Session>(
        tcp_connect("127.0.0.1", listener.port()),
        [&, c](json msg) {
          std::lock_guard lock(mutex);
          echoes[static_cast<std::size_t>(c)].push_back(
              msg.at("echo").get<std::string>());
          cv.notify_all();
        },
        [](const std::string&) {}));
  }
  for (int i = 0; i < kEach; ++i)
    for (int c = 0; c < kClients; ++c)
      REQUIRE(clients[static_cast<std::size_t>(c)]->send(
          {{"from", "client-" + std::to_string(c)}, {"n", i}}));

  {
    std::unique_lock lock(mutex);
    REQUIRE(cv.wait_for(lock, std::chrono::seconds(10), [&] {
      std::size_t total = 0;
      for (const auto& e : echoes) total += e.size();
      return total == kClients * kEach;
    }));
  }

  std::lock_guard lock(mutex);
  REQUIRE(sides.size() == kClients);
  for (const auto& side : sides) {
    REQUIRE(side->seen.size() == kEach);
    // Every message a server session saw names the same client.
    for (const auto& from : side->seen) CHECK(from == side->seen.front());
  }
  for (int c = 0; c < kClients; ++c) {
    REQUIRE(echoes[static_cast<std::size_t>(c)].size() == kEach);
    for (const auto& echo : echoes[static_cast<std::size_t>(c)])
      CHECK(echo == "client-" + std::to_string(c));
  }
  for (auto& client : clients) client->close();
}
