#pragma once

#include <string>
#include <vector>

#include "rollout/types.hpp"

namespace rollout::mock {

// Minimal merge-table tokenizer: token id = index into `pieces`, encoding is
// greedy longest-match left to right. Exists only to demonstrate
// re-tokenization drift — the failure mode the token-in/token-out protocol
// removes — so it is deliberately ambiguous.
struct ToyTokenizer {
  std::vector<std::string> pieces;

  TokenIds tokenize(const std::string& text) const;
  std::string detokenize(const TokenIds& ids) const;
};

// pieces {"ab", "a", "b", "ba"}: the sequence [a, b] detokenizes to "ab",
// which greedy matching re-tokenizes to the single token [ab].
ToyTokenizer ambiguous_toy_tokenizer();

struct DriftReport {
  TokenIds original_ids;
  TokenIds roundtrip_ids;
  bool drifted = false;
};

// `original_ids` are what generation produced (token ids are canonical);
// the probe detokenizes them and re-tokenizes the text, reporting whether
// the round trip changed the sequence.
DriftReport drift_probe(const ToyTokenizer& tok, const TokenIds& original_ids);

}  // namespace rollout::mock
