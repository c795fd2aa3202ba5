#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "latentscale/model.hpp"
#include "latentscale/rng.hpp"
#include "latentscale/sampler.hpp"
#include "latentscale/task.hpp"

namespace latentscale::annotator {

struct AnnotatedStep {
  std::string trajectory_ref;
  int step = 0;  // 1..T
  int he = 0;
  double se = 0.0;
  int n_mc = 0;
  int mc_correct = 0;
};

struct OutcomeLabel {
  std::string trajectory_ref;
  int r_out = 0;
};

/// Produces the canonical answer of one stochastic continuation of a
/// trajectory whose first i thoughts are fixed.
using Completer = std::function<std::string(const task::Problem& problem,
                                            std::span<const std::vector<double>> prefix, num::RngStream rng)>;

/// Completer backed by the model's dropout sampling.
Completer model_completer(model::Transformer& model, const task::Vocabulary& vocab);

/// "p<problem_id>/s<sample_index>".
std::string trajectory_ref(const model::Trajectory& t);

/// Runs n_mc completions from thoughts s_1..s_i; completion j uses
/// rng.split(j).
AnnotatedStep mc_annotate_step(const Completer& completer, const task::Problem& problem,
                               const model::Trajectory& trajectory, int i, int n_mc, const num::RngStream& rng);

struct AnnotationResult {
  std::vector<sampler::CandidateSet> survivors;  // deduplicated trajectories per problem
  std::vector<AnnotatedStep> steps;
  std::vector<OutcomeLabel> outcomes;
  double survivors_per_problem = 0.0;
};

/// Samples M trajectories per problem, keeps the first of each answer group
/// and annotates all T steps of every survivor.
AnnotationResult annotate_corpus(model::Transformer& model, const task::Vocabulary& vocab,
                                 const std::vector<task::Problem>& problems, int m, int n_mc,
                                 const num::RngStream& rng);

/// Same protocol with explicit sampling and completion functions (used with stubs).
AnnotationResult annotate_corpus(const std::vector<sampler::CandidateSet>& sampled, const Completer& completer,
                                 const std::vector<task::Problem>& problems, int latent_steps, int n_mc,
                                 const num::RngStream& rng);

/// Downsamples the majority HE class to the minority size. Kept samples stay
/// in input order. Throws std::runtime_error naming the class counts if a
/// class is absent.
std::vector<AnnotatedStep> build_prm_dataset(const std::vector<AnnotatedStep>& steps, num::RngStream rng);
std::vector<OutcomeLabel> build_orm_dataset(const std::vector<OutcomeLabel>& outcomes, num::RngStream rng);

std::string steps_to_jsonl(const std::vector<AnnotatedStep>& steps);
std::vector<AnnotatedStep> steps_from_jsonl(std::string_view text);
std::string outcomes_to_jsonl(const std::vector<OutcomeLabel>& outcomes);
std::vector<OutcomeLabel> outcomes_from_jsonl(std::string_view text);

}  // namespace latentscale::annotator
