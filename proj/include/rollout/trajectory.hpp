#pragma once

#include <string>
#include <vector>

#include "rollout/errors.hpp"
#include "rollout/types.hpp"

namespace rollout {

enum class Role { SYSTEM, USER, ASSISTANT, TOOL };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::SYSTEM: return "system";
    case Role::USER: return "user";
    case Role::ASSISTANT: return "assistant";
    case Role::TOOL: return "tool";
  }
  return "?";
}

// One conversation turn. Non-assistant turns carry input_ids (tokenized at
// append time); assistant turns carry output_ids with aligned logprobs,
// exactly as returned by the backend. `text` is display-only and is never
// re-tokenized anywhere in the system.
struct Turn {
  Role role = Role::USER;
  TokenIds input_ids;
  TokenIds output_ids;
  std::vector<double> logprobs;
  std::string text;
};

inline Turn make_user_turn(TokenIds ids, std::string text = {}) {
  Turn t;
  t.role = Role::USER;
  t.input_ids = std::move(ids);
  t.text = std::move(text);
  return t;
}

inline Turn make_tool_turn(TokenIds ids, std::string text = {}) {
  Turn t;
  t.role = Role::TOOL;
  t.input_ids = std::move(ids);
  t.text = std::move(text);
  return t;
}

inline Turn make_assistant_turn(TokenIds output_ids,
                                std::vector<double> logprobs,
                                std::string text = {}) {
  Turn t;
  t.role = Role::ASSISTANT;
  t.output_ids = std::move(output_ids);
  t.logprobs = std::move(logprobs);
  t.text = std::move(text);
  return t;
}

// Append-only token-level conversation. Turns are immutable once appended;
// the flattened prompt for the next turn is the concatenation of every
// turn's token field in order.
class TokenTrajectory {
 public:
  void append(Turn turn) {
    validate(turn);
    turns_.push_back(std::move(turn));
  }

  const std::vector<Turn>& turns() const { return turns_; }
  std::size_t size() const { return turns_.size(); }
  bool empty() const { return turns_.empty(); }

  TokenIds flatten() const { return flatten_range(0, turns_.size()); }

  TokenIds flatten_range(std::size_t begin, std::size_t end) const {
    TokenIds out;
    for (std::size_t i = begin; i < end && i < turns_.size(); ++i) {
      const auto& t = turns_[i];
      const auto& ids =
          t.role == Role::ASSISTANT ? t.output_ids : t.input_ids;
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  static void validate(const Turn& turn) {
    if (turn.role == Role::ASSISTANT) {
      if (!turn.input_ids.empty())
        throw MalformedTurn("assistant turn must not carry input_ids");
      if (turn.logprobs.size() != turn.output_ids.size())
        throw MalformedTurn("assistant turn logprobs not aligned with output_ids");
    } else {
      if (!turn.output_ids.empty() || !turn.logprobs.empty())
        throw MalformedTurn("non-assistant turn must not carry output_ids/logprobs");
    }
  }

 private:
  std::vector<Turn> turns_;
};

}  // namespace rollout
