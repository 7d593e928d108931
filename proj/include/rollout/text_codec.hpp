#pragma once

#include <string>

#include "rollout/types.hpp"

namespace rollout {

// Byte-level text<->token mapping used when the server tokenizes new
// messages (user prompts, tool observations). Token IDs stay opaque
// integers; IDs below 256 happen to round-trip to bytes, which keeps
// scripted conversations and display text readable.
inline TokenIds encode_text(const std::string& text) {
  TokenIds ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

// Best-effort display rendering. IDs outside the byte range (e.g. from the
// hash-mode backend) render as bracketed numbers.
inline std::string decode_text(const TokenIds& ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else {
      out += "[" + std::to_string(id) + "]";
    }
  }
  return out;
}

}  // namespace rollout
