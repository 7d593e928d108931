#pragma once

#include <optional>
#include <string>

#include "rollout/clock.hpp"

namespace rollout::sandbox {

// Wire format on the action channel: a 4-byte big-endian payload length
// followed by that many bytes of UTF-8 JSON. Both sides of the socket use
// these helpers, so the framing logic exists exactly once.

// Writes one frame, looping over partial writes. Throws rollout::Error on
// any socket error (EPIPE included — SIGPIPE is suppressed).
void send_frame(int fd, const std::string& payload);

// Reads one frame into `out`. Returns false on clean EOF at a frame
// boundary; throws on a truncated frame or socket error. Oversized length
// headers (> 64 MiB) are treated as corruption.
bool recv_frame(int fd, std::string& out);

// Blocks until fd is readable or `timeout` passes. Returns false on timeout.
bool wait_readable(int fd, Duration timeout);

}  // namespace rollout::sandbox
