#include "rollout/mock/policy.hpp"

#include <algorithm>
#include <cstdio>

#include "rollout/errors.hpp"

namespace rollout::mock {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t state) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    state ^= p[i];
    state *= 1099511628211ULL;
  }
  return state;
}

namespace {

std::uint64_t feed_u64(std::uint64_t state, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  return fnv1a64(bytes, 8, state);
}

}  // namespace

std::uint64_t prompt_digest(const TokenIds& prompt_ids) {
  std::uint64_t state = 14695981039346656037ULL;
  for (TokenId id : prompt_ids) state = feed_u64(state, static_cast<std::uint64_t>(id));
  return state;
}

std::string prompt_digest_hex(const TokenIds& prompt_ids) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(prompt_digest(prompt_ids)));
  return buf;
}

TokenId hash_token(std::uint64_t seed, const TokenIds& prompt_ids,
                   std::uint64_t k, TokenId vocab_size) {
  std::uint64_t state = 14695981039346656037ULL;
  state = feed_u64(state, seed);
  for (TokenId id : prompt_ids) state = feed_u64(state, static_cast<std::uint64_t>(id));
  state = feed_u64(state, k);
  return static_cast<TokenId>(state % static_cast<std::uint64_t>(vocab_size));
}

double token_logprob(TokenId token) {
  return -(1.0 + static_cast<double>(token % 7) / 10.0);
}

Generated generate_tokens(const PolicyConfig& cfg, const TokenIds& prompt_ids,
                          const SamplingParams& params) {
  if (prompt_ids.empty()) throw MalformedRequest{"empty prompt_ids"};
  params.validate();

  Generated out;
  auto stopped_on = [&](TokenId t) {
    return std::find(params.stop_token_ids.begin(), params.stop_token_ids.end(), t) !=
           params.stop_token_ids.end();
  };

  const TokenIds* scripted = nullptr;
  if (cfg.mode == PolicyConfig::Mode::SCRIPT) {
    auto it = cfg.script.find(prompt_digest_hex(prompt_ids));
    if (it != cfg.script.end()) scripted = &it->second;
    // Unknown prompts fall back to HASH so scripted tests only enumerate
    // the exchanges they care about.
  }

  if (scripted) {
    // Effective script = prefix up to the first stop sentinel; the sentinel
    // itself is never emitted, and running out of script is a natural stop.
    TokenIds effective;
    for (TokenId t : *scripted) {
      if (t == kScriptStop) break;
      effective.push_back(t);
    }
    out.finish_reason = "stop";
    for (TokenId t : effective) {
      if (static_cast<int>(out.output_ids.size()) >= params.max_tokens) {
        out.finish_reason = "length";
        break;
      }
      out.output_ids.push_back(t);
      out.logprobs.push_back(token_logprob(t));
      if (stopped_on(t)) break;
    }
    return out;
  }

  int natural_len = cfg.response_len;
  int limit = std::min(natural_len, params.max_tokens);
  out.finish_reason = limit < natural_len ? "length" : "stop";
  for (int k = 0; k < limit; ++k) {
    TokenId t = hash_token(cfg.seed, prompt_ids, static_cast<std::uint64_t>(k),
                           cfg.vocab_size);
    out.output_ids.push_back(t);
    out.logprobs.push_back(token_logprob(t));
    if (stopped_on(t)) {
      out.finish_reason = "stop";
      break;
    }
  }
  return out;
}

}  // namespace rollout::mock
