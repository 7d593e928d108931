#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rollout/types.hpp"

namespace rollout::mock {

// FNV-1a over a byte stream; the only hash in the deterministic policy, so
// tests can recompute expected outputs from scratch.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t state = 14695981039346656037ULL);

// Digest of a prompt alone (no seed) — the key scripted conversations are
// stored under, stable across backend restarts and seeds.
std::uint64_t prompt_digest(const TokenIds& prompt_ids);
std::string prompt_digest_hex(const TokenIds& prompt_ids);

// k-th output token for a prompt under `seed`: FNV-1a over seed, every
// prompt id, and k (each as 8 little-endian bytes), reduced mod vocab_size.
TokenId hash_token(std::uint64_t seed, const TokenIds& prompt_ids,
                   std::uint64_t k, TokenId vocab_size);

// Arbitrary-but-deterministic; consumers treat logprobs as opaque numbers.
double token_logprob(TokenId token);

struct PolicyConfig {
  enum class Mode { HASH, SCRIPT };
  Mode mode = Mode::HASH;
  std::uint64_t seed = 0;
  TokenId vocab_size = 50000;
  int response_len = 8;  // L: natural output length in HASH mode
  // prompt_digest_hex → scripted output; -1 inside a sequence means "stop
  // here" and is never emitted. Prompts missing from the table fall back to
  // HASH mode so scripted tests don't have to enumerate every exchange.
  std::map<std::string, TokenIds> script;
};

struct Generated {
  TokenIds output_ids;
  std::vector<double> logprobs;
  std::string finish_reason;  // "stop" or "length"
};

inline constexpr TokenId kScriptStop = -1;

// Pure function of (config, prompt, params) — this is the oracle the
// fidelity tests compare full pipeline trajectories against.
Generated generate_tokens(const PolicyConfig& cfg, const TokenIds& prompt_ids,
                          const SamplingParams& params);

}  // namespace rollout::mock
