#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentscale/model.hpp"
#include "latentscale/task.hpp"

namespace latentscale::sampler {

/// Candidates sharing one canonical answer; `indices` are in sampling order,
/// so indices.front() is the representative.
struct AnswerGroup {
  std::string answer;
  std::vector<std::size_t> indices;
};

struct CandidateSet {
  std::uint64_t problem_id = 0;
  std::vector<model::Trajectory> candidates;
  std::vector<std::string> answers;  // canonical answer per candidate
  std::vector<AnswerGroup> groups;   // first-appearance order
};

/// Groups answers by exact string; groups appear in order of first member.
std::vector<AnswerGroup> dedup(const std::vector<std::string>& answers);

/// Fills answers and groups of `set` from its candidates.
void finalize(CandidateSet& set, const task::Vocabulary& vocab);

/// N dropout-enabled trajectories; sample j uses stream rng.split({problem.id, j}).
CandidateSet sample_candidates(model::Transformer& model, const task::Vocabulary& vocab, const task::Problem& problem,
                               std::size_t n, const num::RngStream& rng, bool dropout_enabled = true);

/// Mean over problems of "any of the first n answers is correct".
double pass_at_n(const std::vector<CandidateSet>& sets, const std::vector<std::string>& truths, std::size_t n);

struct AnswerStats {
  double unique = 0.0;              // mean distinct answers among the first n
  double correct = 0.0;             // mean count of correct answers
  double majority_incorrect = 0.0;  // mean size of the largest wrong-answer group
};
AnswerStats answer_stats(const std::vector<CandidateSet>& sets, const std::vector<std::string>& truths, std::size_t n);

/// Fraction of problems whose dropout-free trajectory answers correctly.
double deterministic_accuracy(model::Transformer& model, const task::Vocabulary& vocab,
                              const std::vector<task::Problem>& problems);

// Trajectory store: one JSON object per trajectory with fields problem_id,
// sample_index, thoughts (f64 arrays), answer_tokens, answer, answer_logprob,
// truncated, rng.
std::string to_jsonl(const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> from_jsonl(std::string_view text, const task::Vocabulary& vocab);

}  // namespace latentscale::sampler
