#include <cstdlib>

#include "lagoon/error.hpp"
#include "lagoon/transport.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

// Loops over the source until `want` bytes arrived or the stream ended.
std::size_t fill(const ByteSource& source, char* buf, std::size_t want) {
  std::size_t got = 0;
  while (got < want) {
    std::size_t n = source(buf + got, want - got);
    if (n == 0) break;
    got += n;
  }
  return got;
}

}  // namespace

std::string encode_frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes)
    throw Error("frame-too-large", "body is " + std::to_string(body.size()) +
                                       " bytes, limit " +
                                       std::to_string(kMaxFrameBytes));
  const auto len = static_cast<std::uint32_t>(body.size());
  std::string frame;
  frame.reserve(4 + body.size());
  frame.push_back(static_cast<char>((len >> 24) & 0xff));
  frame.push_back(static_cast<char>((len >> 16) & 0xff));
  frame.push_back(static_cast<char>((len >> 8) & 0xff));
  frame.push_back(static_cast<char>(len & 0xff));
  frame.append(body);
  return frame;
}

std::optional<std::string> read_frame(const ByteSource& source) {
  unsigned char header[4];
  const std::size_t header_got = fill(source, reinterpret_cast<char*>(header), 4);
  if (header_got == 0) return std::nullopt;  // clean end between frames
  if (header_got < 4)
    throw Error("length-mismatch-on-eof",
                "stream ended inside the length prefix (" +
                    std::to_string(header_got) + " of 4 bytes)");
  const std::uint32_t len = (std::uint32_t{header[0]} << 24) |
                            (std::uint32_t{header[1]} << 16) |
                            (std::uint32_t{header[2]} << 8) | header[3];
  if (len > kMaxFrameBytes)
    throw Error("frame-too-large", "declared length " + std::to_string(len) +
                                       " exceeds limit " +
                                       std::to_string(kMaxFrameBytes));
  std::string body(len, '\0');
  const std::size_t body_got = len == 0 ? 0 : fill(source, body.data(), len);
  if (body_got < len)
    throw Error("truncated-stream", "declared length " + std::to_string(len) +
                                        ", stream ended after " +
                                        std::to_string(body_got) + " bytes");
  return body;
}

json Hello::to_json() const {
  return {{"type", "hello"},
          {"protocol_version", protocol_version},
          {"node", node},
          {"roles", roles},
          {"capacity", capacity}};
}

Hello Hello::from_json(const json& j) {
  Hello h;
  try {
    h.protocol_version = j.at("protocol_version").get<int>();
    h.node = j.at("node").get<std::string>();
    if (j.contains("roles"))
      h.roles = j.at("roles").get<std::vector<std::string>>();
    h.capacity = j.value("capacity", 0);
  } catch (const std::exception& e) {
    throw Error("invalid-hello", e.what());
  }
  return h;
}

HelloDecision screen_hello(const Hello& hello, const std::string& server_node,
                           const std::vector<std::string>& active_nodes) {
  if (hello.protocol_version != kProtocolVersion)
    return {false, "version-mismatch",
            "peer speaks protocol " + std::to_string(hello.protocol_version) +
                ", this server speaks " + std::to_string(kProtocolVersion),
            false};
  if (hello.node.empty())
    return {false, "invalid-hello", "empty node name", false};
  if (hello.node == server_node)
    return {false, "duplicate-node-name",
            "'" + hello.node + "' is the serving node itself", false};
  for (const auto& n : active_nodes)
    if (n == hello.node) return {true, "", "", true};
  return {true, "", "", false};
}

std::uint16_t resolve_port(std::optional<int> explicit_port) {
  auto check = [](long value, const std::string& origin) {
    if (value < 1 || value > 65535)
      throw Error("invalid-port",
                  origin + " value " + std::to_string(value) +
                      " outside 1..65535");
    return static_cast<std::uint16_t>(value);
  };
  if (explicit_port) return check(*explicit_port, "port argument");
  if (const char* env = std::getenv("LAGOON_PORT"); env && *env) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end == env || *end != '\0')
      throw Error("invalid-port",
                  std::string{"LAGOON_PORT is not a number: '"} + env + "'");
    return check(value, "LAGOON_PORT");
  }
  return kDefaultPort;
}

}  // namespace lagoon
