#include "latentscale/task.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "latentscale/io.hpp"

namespace latentscale::task {

namespace {

constexpr const char* kSpecials[] = {"<pad>", "<bos>", "<eos>", "<bot>", "<eot>", "<lat>"};
constexpr const char* kSymbols = "0123456789+-*=#;";
constexpr const char* kNames[] = {"ann", "bob", "cal", "dee", "eve", "fay"};
constexpr const char* kAddWords[] = {"add", "plus", "gains"};
constexpr const char* kSubWords[] = {"minus", "loses", "less"};
constexpr const char* kMulWords[] = {"times", "scales"};
constexpr const char* kLinkWords[] = {"has"};

struct OpWord {
  char op;
  const char* word;
};

std::vector<OpWord> op_words() {
  std::vector<OpWord> out;
  for (const char* w : kAddWords) out.push_back({'+', w});
  for (const char* w : kSubWords) out.push_back({'-', w});
  for (const char* w : kMulWords) out.push_back({'*', w});
  return out;
}

char op_for_word(std::string_view w) {
  for (const auto& ow : op_words()) {
    if (w == ow.word) return ow.op;
  }
  return 0;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

bool is_digit_run(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace

std::string Problem::template_key() const {
  std::istringstream in(prompt);
  std::string word;
  std::string key;
  while (in >> word) {
    if (is_digit_run(word)) continue;
    if (!key.empty()) key += ' ';
    key += word;
  }
  return key;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) tokens_.emplace_back(s);
  for (const char* c = kSymbols; *c; ++c) tokens_.emplace_back(1, *c);
  first_word_ = static_cast<int>(tokens_.size());
  for (const char* w : kNames) tokens_.emplace_back(w);
  for (const char* w : kLinkWords) tokens_.emplace_back(w);
  for (const auto& ow : op_words()) tokens_.emplace_back(ow.word);
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
}

bool Vocabulary::is_word(int id) const { return id >= first_word_ && static_cast<std::size_t>(id) < tokens_.size(); }

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw std::invalid_argument("out-of-vocabulary token: '" + std::string(token) + "'");
  return it->second;
}

int Vocabulary::symbol(char c) const {
  auto it = index_.find(std::string(1, c));
  if (it == index_.end() || is_word(it->second) || is_special(it->second)) {
    throw std::invalid_argument(std::string("out-of-vocabulary symbol: '") + c + "'");
  }
  return it->second;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view chunk = text.substr(i, j - i);
    auto it = index_.find(std::string(chunk));
    if (it != index_.end() && (is_word(it->second) || is_special(it->second))) {
      out.push_back(it->second);
    } else {
      for (char c : chunk) out.push_back(symbol(c));
    }
    i = j;
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  bool prev_symbol = false;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const int t = ids[k];
    const bool symbol_token = !is_word(t) && !is_special(t);
    if (k > 0 && !(symbol_token && prev_symbol)) out += ' ';
    out += token(t);
    prev_symbol = symbol_token;
  }
  return out;
}

std::optional<std::string> canonical_answer(std::string_view text) {
  bool negative = false;
  if (!text.empty() && (text[0] == '-' || text[0] == '+')) {
    negative = text[0] == '-';
    text.remove_prefix(1);
  }
  if (!is_digit_run(text)) return std::nullopt;
  const auto nz = text.find_first_not_of('0');
  std::string digits = nz == std::string_view::npos ? "0" : std::string(text.substr(nz));
  if (negative && digits != "0") digits.insert(digits.begin(), '-');
  return digits;
}

std::vector<int> prompt_tokens(const Vocabulary& vocab, const Problem& p) { return vocab.tokenize(p.prompt); }

std::vector<std::vector<int>> step_tokens(const Vocabulary& vocab, const Problem& p) {
  std::vector<std::vector<int>> out;
  for (const auto& s : p.steps) out.push_back(vocab.tokenize(s + ";"));
  return out;
}

std::vector<int> answer_tokens(const Vocabulary& vocab, const Problem& p) { return vocab.tokenize("#" + p.answer); }

std::string extract_answer(const Vocabulary& vocab, const std::vector<int>& tokens) {
  const int hash = vocab.symbol('#');
  std::size_t end = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kEos) {
      end = i;
      break;
    }
  }
  std::size_t start = end;
  while (start > 0 && tokens[start - 1] != hash) --start;
  if (start == 0) return kNoAnswer;
  std::string digits;
  for (std::size_t i = start; i < end; ++i) {
    if (vocab.is_special(tokens[i]) || vocab.is_word(tokens[i])) return kNoAnswer;
    digits += vocab.token(tokens[i]);
  }
  return canonical_answer(digits).value_or(kNoAnswer);
}

std::optional<long> execute_steps(const Problem& problem) {
  // Chain values from the prompt: first number is the start, then op-word/number pairs.
  std::istringstream in(problem.prompt);
  std::string word;
  std::vector<std::pair<char, long>> ops;
  std::optional<long> start;
  char pending = 0;
  while (in >> word) {
    if (is_digit_run(word)) {
      const long v = std::stol(word);
      if (!start) {
        start = v;
      } else if (pending) {
        ops.emplace_back(pending, v);
        pending = 0;
      } else {
        return std::nullopt;
      }
    } else if (char op = op_for_word(word)) {
      pending = op;
    }
  }
  if (!start || pending || ops.size() != problem.steps.size()) return std::nullopt;
  long value = *start;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::string& step = problem.steps[i];
    const auto eq = step.find('=');
    const auto op_pos = step.find_first_of("+-*", 1);
    if (eq == std::string::npos || op_pos == std::string::npos || op_pos > eq) return std::nullopt;
    const std::string lhs = step.substr(0, op_pos);
    const std::string rhs = step.substr(op_pos + 1, eq - op_pos - 1);
    const std::string res = step.substr(eq + 1);
    if (!is_digit_run(lhs) || !is_digit_run(rhs) || !is_digit_run(res)) return std::nullopt;
    if (std::stol(lhs) != value || step[op_pos] != ops[i].first || std::stol(rhs) != ops[i].second) {
      return std::nullopt;
    }
    switch (ops[i].first) {
      case '+': value += ops[i].second; break;
      case '-': value -= ops[i].second; break;
      default: value *= ops[i].second; break;
    }
    if (std::stol(res) != value) return std::nullopt;
  }
  if (canonical_answer(problem.answer) != std::to_string(value)) return std::nullopt;
  return value;
}

namespace {

Problem sample_problem(const TaskConfig& cfg, num::RngStream& rng) {
  static const std::vector<OpWord> words = op_words();
  Problem p;
  long value = rng.uniform_int(1, cfg.max_start);
  const auto n_steps = rng.uniform_int(cfg.min_steps, cfg.max_steps);
  p.prompt = std::string(kNames[rng.below(std::size(kNames))]) + " has " + std::to_string(value);
  for (std::int64_t s = 0; s < n_steps; ++s) {
    while (true) {
      const OpWord& ow = words[rng.below(words.size())];
      const long operand =
          ow.op == '*' ? rng.uniform_int(2, cfg.max_multiplier) : rng.uniform_int(1, cfg.max_addend);
      const long next = ow.op == '+' ? value + operand : ow.op == '-' ? value - operand : value * operand;
      if (next < 0 || next > cfg.max_value) continue;
      p.prompt += std::string(" ") + ow.word + " " + std::to_string(operand);
      p.steps.push_back(std::to_string(value) + ow.op + std::to_string(operand) + "=" + std::to_string(next));
      value = next;
      break;
    }
  }
  p.answer = std::to_string(value);
  return p;
}

}  // namespace

OverlapAudit audit_overlap(const std::vector<Problem>& train, const std::vector<Problem>& test) {
  std::set<std::string> train_keys, test_keys, train_answers, train_prompts;
  for (const auto& p : train) {
    train_keys.insert(p.template_key());
    train_answers.insert(p.answer);
    train_prompts.insert(p.prompt);
  }
  OverlapAudit a;
  for (const auto& p : test) {
    test_keys.insert(p.template_key());
    if (train_answers.count(p.answer)) ++a.test_answers_seen_in_train;
    if (train_prompts.count(p.prompt)) ++a.shared_prompts;
  }
  a.train_templates = train_keys.size();
  a.test_templates = test_keys.size();
  for (const auto& k : test_keys) {
    if (train_keys.count(k)) ++a.shared_templates;
  }
  a.distinct_train_answers = train_answers.size();
  return a;
}

Dataset generate_dataset(const TaskConfig& config, std::size_t n_train, std::size_t n_test, num::RngStream rng) {
  if (n_train == 0 || n_test == 0) throw std::invalid_argument("generate_dataset: split sizes must be positive");
  if (config.min_steps < 1 || config.max_steps < config.min_steps || config.max_multiplier < 2 ||
      config.test_fraction_percent <= 0 || config.test_fraction_percent >= 100) {
    throw std::invalid_argument("generate_dataset: invalid task configuration");
  }
  Dataset ds;
  std::set<std::string> seen;
  const std::size_t attempt_limit = 1000 * (n_train + n_test);
  for (std::size_t attempt = 0; ds.train.size() < n_train || ds.test.size() < n_test; ++attempt) {
    if (attempt > attempt_limit) throw std::runtime_error("generate_dataset: problem space exhausted");
    Problem p = sample_problem(config, rng);
    if (!seen.insert(p.prompt).second) continue;
    const bool test_bucket = fnv1a(p.prompt) % 100 < static_cast<std::uint64_t>(config.test_fraction_percent);
    auto& split = test_bucket ? ds.test : ds.train;
    const std::size_t cap = test_bucket ? n_test : n_train;
    if (split.size() >= cap) continue;
    split.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < ds.train.size(); ++i) ds.train[i].id = i;
  for (std::size_t i = 0; i < ds.test.size(); ++i) ds.test[i].id = n_train + i;
  ds.audit = audit_overlap(ds.train, ds.test);
  return ds;
}

std::string to_jsonl(const std::vector<Problem>& problems) {
  std::string out;
  for (const auto& p : problems) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["prompt"] = p.prompt;
    j["steps"] = p.steps;
    j["answer"] = p.answer;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Problem> from_jsonl(std::string_view text) {
  std::vector<Problem> out;
  for (const auto& j : io::parse_jsonl(text)) {
    Problem p;
    p.id = j.at("id").get<std::uint64_t>();
    p.prompt = j.at("prompt").get<std::string>();
    p.steps = j.at("steps").get<std::vector<std::string>>();
    p.answer = j.at("answer").get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<Problem>& problems) {
  io::write_text(path, to_jsonl(problems));
}

std::vector<Problem> read_jsonl(const std::string& path) { return from_jsonl(io::read_text(path)); }

}  // namespace latentscale::task
