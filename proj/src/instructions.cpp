#include "numblocks/instructions.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::instr {

namespace {

constexpr std::array<std::string_view, 20> kSmall = {
    "zero",    "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen"};

constexpr std::array<std::string_view, 10> kDecades = {"",      "",      "twenty",  "thirty", "forty",
                                                       "fifty", "sixty", "seventy", "eighty", "ninety"};

std::string_view place_name(env::BlockKind k) {
  switch (k) {
    case env::BlockKind::Hundred: return "hundreds";
    case env::BlockKind::Ten: return "tens";
    case env::BlockKind::Unit: return "units";
  }
  return "?";
}

std::string count_phrase(int count) {
  if (count == 0) return "no blocks";
  if (count == 1) return "one block";
  return fmt::format("{} blocks", kSmall.at(static_cast<std::size_t>(count)));
}

std::string prefix(const env::EnvState& s) { return fmt::format("this is {} .", number_to_words(s.target)); }

template <typename Fn>
void for_each_token(std::string_view text, Fn&& fn) {
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      fn(std::string_view(current));
      current.clear();
    }
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (ch == '.' || ch == ',') {
      flush();
      const char punct[1] = {ch};
      fn(std::string_view(punct, 1));
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
}

}  // namespace

std::string_view to_string(InstructionMode m) {
  switch (m) {
    case InstructionMode::PolicyBased: return "policy";
    case InstructionMode::StateBased: return "state";
    case InstructionMode::NoLanguage: return "none";
  }
  return "?";
}

InstructionMode instruction_mode_from_string(std::string_view s) {
  if (s == "policy") return InstructionMode::PolicyBased;
  if (s == "state") return InstructionMode::StateBased;
  if (s == "none") return InstructionMode::NoLanguage;
  throw DomainError(fmt::format("unknown instruction mode '{}' (expected policy, state or none)", s));
}

std::string number_to_words(int n) {
  if (n < env::kMinTarget || n > env::kMaxTarget) {
    throw DomainError(fmt::format("number_to_words: {} outside [1, 999]", n));
  }
  std::string out;
  const int hundreds = n / 100;
  const int rest = n % 100;
  if (hundreds > 0) {
    out = fmt::format("{} hundred", kSmall[hundreds]);
    if (rest == 0) return out;
    out += " and ";
  }
  if (rest < 20) {
    out += kSmall[rest];
  } else {
    out += kDecades[rest / 10];
    if (rest % 10 != 0) {
      out += ' ';
      out += kSmall[rest % 10];
    }
  }
  return out;
}

std::string policy_instruction(const env::EnvState& state) {
  if (!state.running()) return prefix(state) + " you are done";
  if (state.carried) {
    const env::BlockKind k = *state.carried;
    return fmt::format("{} place the {} block in the {} place", prefix(state), env::to_string(k), place_name(k));
  }
  const env::Action next = env::oracle_action(state);
  return fmt::format("{} pick up a {} block", prefix(state), env::to_string(env::block_of(next)));
}

std::string state_instruction(const env::EnvState& state) {
  using env::BlockKind;
  std::string out = fmt::format(
      "{} there are {} in the hundreds place , {} in the tens place and {} in the units place . ", prefix(state),
      count_phrase(state.placed[env::column(BlockKind::Hundred)]),
      count_phrase(state.placed[env::column(BlockKind::Ten)]),
      count_phrase(state.placed[env::column(BlockKind::Unit)]));
  if (state.carried) {
    out += fmt::format("you are holding a {} block", env::to_string(*state.carried));
  } else {
    out += "you are not holding any block";
  }
  return out;
}

std::string instruction(const env::EnvState& state, InstructionMode mode) {
  switch (mode) {
    case InstructionMode::PolicyBased: return policy_instruction(state);
    case InstructionMode::StateBased: return state_instruction(state);
    case InstructionMode::NoLanguage: return {};
  }
  return {};
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  for_each_token(text, [&](std::string_view tok) { out.emplace_back(tok); });
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, int max_seq_len) : max_seq_len_(max_seq_len) {
  if (max_seq_len < 1) throw DomainError("vocabulary max_seq_len must be positive");
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  tokens_.reserve(tokens.size() + 2);
  tokens_.emplace_back(kPadToken);
  tokens_.emplace_back(kUnkToken);
  for (auto& t : tokens) {
    if (t == kPadToken || t == kUnkToken) continue;
    tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DomainError(fmt::format("token id {} outside vocabulary", id));
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary vocabulary_from_token_list(const std::vector<std::string>& tokens, int max_seq_len) {
  if (tokens.size() < 2 || tokens[0] != Vocabulary::kPadToken || tokens[1] != Vocabulary::kUnkToken) {
    throw DomainError("token list must start with the reserved <pad> and <unk> entries");
  }
  Vocabulary v(std::vector<std::string>(tokens.begin() + 2, tokens.end()), max_seq_len);
  if (v.tokens() != tokens) throw DomainError("token list is not sorted and unique after the reserved slots");
  return v;
}

Vocabulary build_vocabulary() {
  std::set<std::string, std::less<>> seen;
  int max_len = 0;
  auto absorb = [&](const std::string& text) {
    int len = 0;
    for_each_token(text, [&](std::string_view tok) {
      ++len;
      if (seen.find(tok) == seen.end()) seen.emplace(tok);
    });
    max_len = std::max(max_len, len);
  };
  for (int target = env::kMinTarget; target <= env::kMaxTarget; ++target) {
    for (const auto& s : env::reachable_states(target)) {
      absorb(policy_instruction(s));
      absorb(state_instruction(s));
    }
  }
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()), max_len);
}

const Vocabulary& default_vocabulary() {
  static const Vocabulary vocab = build_vocabulary();
  return vocab;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(vocab.max_seq_len()), Vocabulary::kPad);
  int n = 0;
  for_each_token(text, [&](std::string_view tok) {
    if (n >= vocab.max_seq_len()) {
      throw TruncationError(
          fmt::format("instruction has more than {} tokens: '{}'", vocab.max_seq_len(), text));
    }
    seq.ids[static_cast<std::size_t>(n++)] = vocab.id(tok);
  });
  seq.true_len = n;
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (int i = 0; i < seq.true_len; ++i) {
    if (i > 0) out += ' ';
    out += vocab.token(seq.ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace numblocks::instr
