#include "latentscale/annotator.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "latentscale/io.hpp"

namespace latentscale::annotator {

Completer model_completer(model::Transformer& model, const task::Vocabulary& vocab) {
  return [&model, &vocab](const task::Problem& problem, std::span<const std::vector<double>> prefix,
                          num::RngStream rng) {
    const auto t = model.complete_from(task::prompt_tokens(vocab, problem), prefix, std::move(rng), true);
    return task::extract_answer(vocab, t.answer_tokens);
  };
}

std::string trajectory_ref(const model::Trajectory& t) {
  return "p" + std::to_string(t.problem_id) + "/s" + std::to_string(t.sample_index);
}

AnnotatedStep mc_annotate_step(const Completer& completer, const task::Problem& problem,
                               const model::Trajectory& trajectory, int i, int n_mc, const num::RngStream& rng) {
  if (i < 1 || static_cast<std::size_t>(i) > trajectory.thoughts.size()) {
    throw std::invalid_argument("mc_annotate_step: step index out of range");
  }
  if (n_mc < 1) throw std::invalid_argument("mc_annotate_step: n_mc must be positive");
  const std::span<const std::vector<double>> prefix(trajectory.thoughts.data(), static_cast<std::size_t>(i));
  AnnotatedStep out;
  out.trajectory_ref = trajectory_ref(trajectory);
  out.step = i;
  out.n_mc = n_mc;
  for (int j = 0; j < n_mc; ++j) {
    if (completer(problem, prefix, rng.split(static_cast<std::uint64_t>(j))) == problem.answer) ++out.mc_correct;
  }
  out.se = static_cast<double>(out.mc_correct) / static_cast<double>(n_mc);
  out.he = out.mc_correct >= 1 ? 1 : 0;
  return out;
}

AnnotationResult annotate_corpus(const std::vector<sampler::CandidateSet>& sampled, const Completer& completer,
                                 const std::vector<task::Problem>& problems, int latent_steps, int n_mc,
                                 const num::RngStream& rng) {
  if (sampled.size() != problems.size()) throw std::invalid_argument("annotate_corpus: sets and problems differ");
  AnnotationResult result;
  std::size_t survivors = 0;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    const auto& set = sampled[p];
    sampler::CandidateSet kept;
    kept.problem_id = set.problem_id;
    for (const auto& g : set.groups) {
      const auto& t = set.candidates[g.indices.front()];
      kept.candidates.push_back(t);
      kept.answers.push_back(g.answer);
      result.outcomes.push_back({trajectory_ref(t), g.answer == problems[p].answer ? 1 : 0});
      for (int i = 1; i <= latent_steps; ++i) {
        const num::RngStream step_rng = rng.split({problems[p].id, t.sample_index, static_cast<std::uint64_t>(i)});
        result.steps.push_back(mc_annotate_step(completer, problems[p], t, i, n_mc, step_rng));
      }
    }
    kept.groups = sampler::dedup(kept.answers);
    survivors += kept.candidates.size();
    result.survivors.push_back(std::move(kept));
  }
  result.survivors_per_problem =
      problems.empty() ? 0.0 : static_cast<double>(survivors) / static_cast<double>(problems.size());
  return result;
}

AnnotationResult annotate_corpus(model::Transformer& model, const task::Vocabulary& vocab,
                                 const std::vector<task::Problem>& problems, int m, int n_mc,
                                 const num::RngStream& rng) {
  if (m < 1) throw std::invalid_argument("annotate_corpus: M must be positive");
  std::vector<sampler::CandidateSet> sampled;
  const num::RngStream sample_rng = rng.split(0);
  for (const auto& p : problems) {
    sampled.push_back(sampler::sample_candidates(model, vocab, p, static_cast<std::size_t>(m), sample_rng));
  }
  return annotate_corpus(sampled, model_completer(model, vocab), problems, model.config().latent_steps, n_mc,
                         rng.split(1));
}

namespace {

template <class Item, class IsPositive>
std::vector<Item> balance(const std::vector<Item>& items, IsPositive positive, num::RngStream& rng, const char* what) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < items.size(); ++i) (positive(items[i]) ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) {
    throw std::runtime_error(std::string(what) + " dataset needs both classes: " + std::to_string(pos.size()) +
                             " positive, " + std::to_string(neg.size()) + " negative");
  }
  auto& major = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  rng.shuffle(major);
  major.resize(keep);
  std::vector<std::size_t> chosen(pos);
  chosen.insert(chosen.end(), neg.begin(), neg.end());
  std::sort(chosen.begin(), chosen.end());
  std::vector<Item> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(items[i]);
  return out;
}

}  // namespace

std::vector<AnnotatedStep> build_prm_dataset(const std::vector<AnnotatedStep>& steps, num::RngStream rng) {
  return balance(steps, [](const AnnotatedStep& s) { return s.he == 1; }, rng, "PRM");
}

std::vector<OutcomeLabel> build_orm_dataset(const std::vector<OutcomeLabel>& outcomes, num::RngStream rng) {
  return balance(outcomes, [](const OutcomeLabel& o) { return o.r_out == 1; }, rng, "ORM");
}

std::string steps_to_jsonl(const std::vector<AnnotatedStep>& steps) {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["trajectory_ref"] = s.trajectory_ref;
    j["step"] = s.step;
    j["he"] = s.he;
    j["se"] = s.se;
    j["n_mc"] = s.n_mc;
    j["mc_correct"] = s.mc_correct;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<AnnotatedStep> steps_from_jsonl(std::string_view text) {
  std::vector<AnnotatedStep> out;
  for (const auto& j : io::parse_jsonl(text)) {
    out.push_back({j.at("trajectory_ref").get<std::string>(), j.at("step").get<int>(), j.at("he").get<int>(),
                   j.at("se").get<double>(), j.at("n_mc").get<int>(), j.at("mc_correct").get<int>()});
  }
  return out;
}

std::string outcomes_to_jsonl(const std::vector<OutcomeLabel>& outcomes) {
  std::string out;
  for (const auto& o : outcomes) {
    nlohmann::ordered_json j;
    j["trajectory_ref"] = o.trajectory_ref;
    j["r_out"] = o.r_out;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<OutcomeLabel> outcomes_from_jsonl(std::string_view text) {
  std::vector<OutcomeLabel> out;
  for (const auto& j : io::parse_jsonl(text)) {
    out.push_back({j.at("trajectory_ref").get<std::string>(), j.at("r_out").get<int>()});
  }
  return out;
}

}  // namespace latentscale::annotator
