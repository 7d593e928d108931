#include "rollout/mock/toy_tokenizer.hpp"

#include "rollout/errors.hpp"

namespace rollout::mock {

TokenIds ToyTokenizer::tokenize(const std::string& text) const {
  TokenIds out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    // Greedy longest match; earliest piece wins a length tie.
    std::size_t best_len = 0;
    TokenId best_id = -1;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const std::string& p = pieces[i];
      if (p.empty() || p.size() <= best_len) continue;
      if (text.compare(pos, p.size(), p) == 0) {
        best_len = p.size();
        best_id = static_cast<TokenId>(i);
      }
    }
    if (best_len == 0)
      throw MalformedRequest{"untokenizable text at offset " + std::to_string(pos)};
    out.push_back(best_id);
    pos += best_len;
  }
  return out;
}

std::string ToyTokenizer::detokenize(const TokenIds& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces.size())
      throw MalformedRequest{"token id " + std::to_string(id) + " outside toy vocabulary"};
    out += pieces[static_cast<std::size_t>(id)];
  }
  return out;
}

ToyTokenizer ambiguous_toy_tokenizer() {
  return ToyTokenizer{{"ab", "a", "b", "ba"}};
}

DriftReport drift_probe(const ToyTokenizer& tok, const TokenIds& original_ids) {
  DriftReport report;
  report.original_ids = original_ids;
  report.roundtrip_ids = tok.tokenize(tok.detokenize(original_ids));
  report.drifted = report.roundtrip_ids != report.original_ids;
  return report;
}

}  // namespace rollout::mock
