#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "numblocks/env.hpp"

namespace numblocks::instr {

enum class InstructionMode : std::uint8_t { PolicyBased, StateBased, NoLanguage };

std::string_view to_string(InstructionMode m);
// Accepts "policy", "state", "none".
InstructionMode instruction_mode_from_string(std::string_view s);

// Lowercase English words for 1..999; "and" after "hundred", compounds spaced ("twenty one").
std::string number_to_words(int n);

std::string policy_instruction(const env::EnvState& state);
std::string state_instruction(const env::EnvState& state);
// Empty for NoLanguage.
std::string instruction(const env::EnvState& state, InstructionMode mode);

// Lowercases and splits on whitespace; '.' and ',' become standalone tokens.
std::vector<std::string> split_tokens(std::string_view text);

struct TokenSeq {
  std::vector<int> ids;  // always max_seq_len long
  int true_len = 0;

  bool operator==(const TokenSeq&) const = default;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  // `tokens` excludes the reserved slots; it is sorted and deduplicated here.
  Vocabulary(std::vector<std::string> tokens, int max_seq_len);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  int max_seq_len() const { return max_seq_len_; }
  // Full id-ordered token list, reserved slots included.
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && max_seq_len_ == other.max_seq_len_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int max_seq_len_;
};

// Rebuilds a vocabulary from a serialized id-ordered token list (reserved slots first).
Vocabulary vocabulary_from_token_list(const std::vector<std::string>& tokens, int max_seq_len);

// Enumerates both instruction streams over every reachable state of every target.
Vocabulary build_vocabulary();

// Process-wide instance of build_vocabulary(), built on first use.
const Vocabulary& default_vocabulary();

// Throws TruncationError when the text has more than max_seq_len tokens.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab);

}  // namespace numblocks::instr
