#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "latentscale/rng.hpp"

namespace latentscale::task {

/// One chained-arithmetic word problem with its gold reasoning steps.
struct Problem {
  std::uint64_t id = 0;
  std::string prompt;              // e.g. "ann has 7 add 5 times 3 minus 4"
  std::vector<std::string> steps;  // e.g. {"7+5=12", "12*3=36", "36-4=32"}
  std::string answer;              // canonical integer string, e.g. "32"

  /// Name plus operator-word sequence; problems sharing it differ only in numbers.
  std::string template_key() const;
};

/// Fixed vocabulary: special tokens, single-character symbols (digits and
/// operators), and whole-word tokens. Words are separated by spaces; symbol
/// runs are written without spaces.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kBot = 3;
  static constexpr int kEot = 4;
  static constexpr int kLatent = 5;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool is_word(int id) const;
  bool is_special(int id) const { return id >= 0 && id <= kLatent; }
  int id(std::string_view token) const;
  int symbol(char c) const;

  /// Throws std::invalid_argument on out-of-vocabulary input.
  std::vector<int> tokenize(std::string_view text) const;
  /// Inverse of tokenize on canonically spaced text. Special tokens are
  /// rendered as their bracketed names.
  std::string detokenize(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int first_word_ = 0;
};

struct TaskConfig {
  int min_steps = 2;
  int max_steps = 4;
  int max_start = 20;
  int max_addend = 20;       // operand bound for add / subtract
  int max_multiplier = 5;    // operand bound for multiply (>= 2)
  int max_value = 999;       // every intermediate result stays in [0, max_value]
  /// Problems whose prompt hashes into the lowest `test_fraction_percent`
  /// buckets may only go to the test split, the rest only to train.
  int test_fraction_percent = 20;
};

struct OverlapAudit {
  std::size_t train_templates = 0;
  std::size_t test_templates = 0;
  std::size_t shared_templates = 0;       // template keys present in both splits
  std::size_t test_answers_seen_in_train = 0;
  std::size_t shared_prompts = 0;         // always 0 by construction
  std::size_t distinct_train_answers = 0;
};

struct Dataset {
  std::vector<Problem> train;
  std::vector<Problem> test;
  OverlapAudit audit;
};

/// Deterministic generator; identical (config, n_train, n_test, rng) gives an
/// identical dataset.
Dataset generate_dataset(const TaskConfig& config, std::size_t n_train, std::size_t n_test, num::RngStream rng);

OverlapAudit audit_overlap(const std::vector<Problem>& train, const std::vector<Problem>& test);

/// Strips leading zeros and an optional '+'; returns nullopt when `text` is
/// not an optionally signed run of digits.
std::optional<std::string> canonical_answer(std::string_view text);

/// Sentinel for answers that do not parse; never equal to a gold answer.
inline const std::string kNoAnswer = "\u2205";

/// Token views of a problem as the model sees it.
std::vector<int> prompt_tokens(const Vocabulary& vocab, const Problem& p);
/// Each gold step followed by the ';' separator.
std::vector<std::vector<int>> step_tokens(const Vocabulary& vocab, const Problem& p);
/// "#" followed by the answer digits.
std::vector<int> answer_tokens(const Vocabulary& vocab, const Problem& p);
/// Canonical answer of generated tokens: the digits after the last '#',
/// up to <eos> or the end; kNoAnswer if they do not parse.
std::string extract_answer(const Vocabulary& vocab, const std::vector<int>& tokens);

/// Replays the gold steps (each "a<op>b=r", chained) and returns the final
/// value, or nullopt if any step is malformed, inconsistent with the prompt
/// chain, or arithmetically wrong.
std::optional<long> execute_steps(const Problem& problem);

// JSONL: one object per line with fields id, prompt, steps[], answer.
std::string to_jsonl(const std::vector<Problem>& problems);
std::vector<Problem> from_jsonl(std::string_view text);
void write_jsonl(const std::string& path, const std::vector<Problem>& problems);
std::vector<Problem> read_jsonl(const std::string& path);

}  // namespace latentscale::task
