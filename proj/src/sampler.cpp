#include "latentscale/sampler.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "latentscale/io.hpp"

namespace latentscale::sampler {

std::vector<AnswerGroup> dedup(const std::vector<std::string>& answers) {
  std::vector<AnswerGroup> groups;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    auto [it, inserted] = slot.emplace(answers[i], groups.size());
    if (inserted) groups.push_back({answers[i], {}});
    groups[it->second].indices.push_back(i);
  }
  return groups;
}

void finalize(CandidateSet& set, const task::Vocabulary& vocab) {
  set.answers.clear();
  for (const auto& t : set.candidates) set.answers.push_back(task::extract_answer(vocab, t.answer_tokens));
  set.groups = dedup(set.answers);
}

CandidateSet sample_candidates(model::Transformer& model, const task::Vocabulary& vocab, const task::Problem& problem,
                               std::size_t n, const num::RngStream& rng, bool dropout_enabled) {
  if (n == 0) throw std::invalid_argument("sample_candidates: N must be at least 1");
  CandidateSet set;
  set.problem_id = problem.id;
  const auto prompt = task::prompt_tokens(vocab, problem);
  for (std::size_t j = 0; j < n; ++j) {
    model::Trajectory t = model.generate_trajectory(prompt, rng.split({problem.id, j}), dropout_enabled);
    t.problem_id = problem.id;
    t.sample_index = j;
    set.candidates.push_back(std::move(t));
  }
  finalize(set, vocab);
  return set;
}

namespace {

void check_aligned(const std::vector<CandidateSet>& sets, const std::vector<std::string>& truths, std::size_t n) {
  if (sets.size() != truths.size()) throw std::invalid_argument("candidate sets and truths differ in length");
  if (sets.empty()) throw std::invalid_argument("no candidate sets");
  for (const auto& s : sets) {
    if (s.answers.size() < n) {
      throw std::invalid_argument("problem " + std::to_string(s.problem_id) + " has " +
                                  std::to_string(s.answers.size()) + " candidates, fewer than N=" + std::to_string(n));
    }
  }
}

}  // namespace

double pass_at_n(const std::vector<CandidateSet>& sets, const std::vector<std::string>& truths, std::size_t n) {
  check_aligned(sets, truths, n);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < sets.size(); ++p) {
    const auto& a = sets[p].answers;
    hits += std::find(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n), truths[p]) != a.begin() + static_cast<std::ptrdiff_t>(n);
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

AnswerStats answer_stats(const std::vector<CandidateSet>& sets, const std::vector<std::string>& truths, std::size_t n) {
  check_aligned(sets, truths, n);
  AnswerStats s;
  for (std::size_t p = 0; p < sets.size(); ++p) {
    const std::vector<std::string> first(sets[p].answers.begin(), sets[p].answers.begin() + static_cast<std::ptrdiff_t>(n));
    const auto groups = dedup(first);
    std::size_t largest_wrong = 0;
    for (const auto& g : groups) {
      if (g.answer == truths[p]) {
        s.correct += static_cast<double>(g.indices.size());
      } else {
        largest_wrong = std::max(largest_wrong, g.indices.size());
      }
    }
    s.unique += static_cast<double>(groups.size());
    s.majority_incorrect += static_cast<double>(largest_wrong);
  }
  const auto count = static_cast<double>(sets.size());
  s.unique /= count;
  s.correct /= count;
  s.majority_incorrect /= count;
  return s;
}

double deterministic_accuracy(model::Transformer& model, const task::Vocabulary& vocab,
                              const std::vector<task::Problem>& problems) {
  if (problems.empty()) throw std::invalid_argument("deterministic_accuracy: no problems");
  std::size_t ok = 0;
  for (const auto& p : problems) {
    const auto t = model.generate_trajectory(task::prompt_tokens(vocab, p), num::RngStream(0, p.id), false);
    ok += task::extract_answer(vocab, t.answer_tokens) == p.answer;
  }
  return static_cast<double>(ok) / static_cast<double>(problems.size());
}

std::string to_jsonl(const std::vector<CandidateSet>& sets) {
  std::string out;
  for (const auto& set : sets) {
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
      const auto& t = set.candidates[i];
      nlohmann::ordered_json j;
      j["problem_id"] = t.problem_id;
      j["sample_index"] = t.sample_index;
      j["thoughts"] = t.thoughts;
      j["answer_tokens"] = t.answer_tokens;
      j["answer"] = i < set.answers.size() ? set.answers[i] : std::string();
      j["answer_logprob"] = t.answer_logprob;
      j["truncated"] = t.truncated;
      j["rng"] = t.rng_fingerprint;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

std::vector<CandidateSet> from_jsonl(std::string_view text, const task::Vocabulary& vocab) {
  std::vector<CandidateSet> sets;
  for (const auto& j : io::parse_jsonl(text)) {
    model::Trajectory t;
    t.problem_id = j.at("problem_id").get<std::uint64_t>();
    t.sample_index = j.at("sample_index").get<std::uint64_t>();
    t.thoughts = j.at("thoughts").get<std::vector<std::vector<double>>>();
    t.answer_tokens = j.at("answer_tokens").get<std::vector<int>>();
    t.answer_logprob = j.at("answer_logprob").get<double>();
    t.truncated = j.at("truncated").get<bool>();
    t.rng_fingerprint = j.at("rng").get<std::string>();
    if (sets.empty() || sets.back().problem_id != t.problem_id) {
      sets.emplace_back();
      sets.back().problem_id = t.problem_id;
    }
    sets.back().candidates.push_back(std::move(t));
  }
  for (auto& s : sets) finalize(s, vocab);
  return sets;
}

}  // namespace latentscale::sampler
