#include "rollout/sandbox/framing.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <cerrno>
#include <cstdint>
#include <cstring>

#include "rollout/errors.hpp"

namespace rollout::sandbox {

namespace {

constexpr std::size_t kMaxFrame = 64u << 20;

void write_all(int fd, const char* data, std::size_t len) {
  while (len > 0) {
    ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error{"channel_write", std::string{"channel write failed: "} + std::strerror(errno)};
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

// Returns bytes read; 0 means EOF before anything arrived.
std::size_t read_all(int fd, char* data, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error{"channel_read", std::string{"channel read failed: "} + std::strerror(errno)};
    }
    if (n == 0) break;  // peer closed
    got += static_cast<std::size_t>(n);
  }
  return got;
}

}  // namespace

void send_frame(int fd, const std::string& payload) {
  if (payload.size() > kMaxFrame)
    throw Error{"channel_write", "frame exceeds 64 MiB"};
  std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  char header[4] = {static_cast<char>((len >> 24) & 0xFF),
                    static_cast<char>((len >> 16) & 0xFF),
                    static_cast<char>((len >> 8) & 0xFF),
                    static_cast<char>(len & 0xFF)};
  write_all(fd, header, 4);
  write_all(fd, payload.data(), payload.size());
}

bool recv_frame(int fd, std::string& out) {
  char header[4];
  std::size_t got = read_all(fd, header, 4);
  if (got == 0) return false;
  if (got < 4) throw Error{"channel_read", "truncated frame header"};

  std::uint32_t len = (static_cast<std::uint32_t>(static_cast<unsigned char>(header[0])) << 24) |
                      (static_cast<std::uint32_t>(static_cast<unsigned char>(header[1])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<unsigned char>(header[2])) << 8) |
                      static_cast<std::uint32_t>(static_cast<unsigned char>(header[3]));
  if (len > kMaxFrame) throw Error{"channel_read", "frame length header corrupt"};

  out.resize(len);
  if (len > 0 && read_all(fd, out.data(), len) < len)
    throw Error{"channel_read", "truncated frame body"};
  return true;
}

bool wait_readable(int fd, Duration timeout) {
  auto deadline_ms = std::chrono::duration_cast<std::chrono::milliseconds>(timeout).count();
  if (deadline_ms < 0) deadline_ms = 0;
  struct pollfd pfd{fd, POLLIN, 0};
  for (;;) {
    int rc = ::poll(&pfd, 1, static_cast<int>(deadline_ms));
    if (rc < 0) {
      if (errno == EINTR) continue;  // close enough: retry with full timeout
      throw Error{"channel_read", std::string{"poll failed: "} + std::strerror(errno)};
    }
    return rc > 0;
  }
}

}  // namespace rollout::sandbox
