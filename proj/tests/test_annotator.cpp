#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "latentscale/annotator.hpp"
#include "scripted_completer.hpp"

using namespace latentscale;
using annotator::Completer;
using testing::ScriptedCompleter;

namespace {

task::Problem problem(std::uint64_t id, std::string answer) {
  task::Problem p;
  p.id = id;
  p.prompt = "ann has 1 add 1 add 1";
  p.steps = {"1+1=2", "2+1=3"};
  p.answer = std::move(answer);
  return p;
}

model::Trajectory trajectory(std::uint64_t problem_id, std::uint64_t sample, int t) {
  model::Trajectory tr;
  tr.problem_id = problem_id;
  tr.sample_index = sample;
  for (int i = 0; i < t; ++i) tr.thoughts.push_back({static_cast<double>(sample), static_cast<double>(i)});
  return tr;
}

}  // namespace

TEST_CASE("hard and soft estimates on hand-written fixtures") {
  struct Case {
    std::vector<std::string> answers;
    int he;
    double se;
  };
  const std::vector<Case> cases{
      {{"5", "5", "5", "5"}, 1, 1.0},
      {{"4", "4", "4", "4"}, 0, 0.0},
      {{"4", "5", "4", "4"}, 1, 0.25},
      {{"∅", "5", "5", "4"}, 1, 0.5},
      {{"05", "-5", "4", "6"}, 0, 0.0},
      {{"5"}, 1, 1.0},
      {{"6"}, 0, 0.0},
      {{"5", "4", "5"}, 1, 2.0 / 3.0},
      {{"4", "4", "5"}, 1, 1.0 / 3.0},
      {{"5", "5", "4", "5", "5", "4", "5"}, 1, 5.0 / 7.0},
  };
  for (const auto& c : cases) {
    ScriptedCompleter stub{c.answers};
    const auto s = annotator::mc_annotate_step(stub.fn(), problem(1, "5"), trajectory(1, 0, 6), 3,
                                               static_cast<int>(c.answers.size()), num::RngStream(0, 0));
    CHECK(s.he == c.he);
    CHECK(std::abs(s.se - c.se) <= 1e-15);
    CHECK(s.n_mc == static_cast<int>(c.answers.size()));
    CHECK(s.step == 3);
    for (auto len : stub.prefix_lengths) CHECK(len == 3u);
  }
}

TEST_CASE("scripted fixtures match the label definitions") {
  num::RngStream rng(3, 0);
  for (int f = 0; f < 20; ++f) {
    const int n = 1 + static_cast<int>(rng.below(12));
    const int i = 1 + static_cast<int>(rng.below(6));
    std::vector<std::string> script;
    int correct = 0;
    for (int j = 0; j < n; ++j) {
      const bool hit = rng.uniform() < 0.3;
      correct += hit;
      script.push_back(hit ? "17" : std::to_string(rng.below(10)));
    }
    ScriptedCompleter stub{script};
    const auto s = annotator::mc_annotate_step(stub.fn(), problem(2, "17"), trajectory(2, 1, 6), i, n,
                                               num::RngStream(0, static_cast<std::uint64_t>(f)));
    CHECK(s.mc_correct == correct);
    CHECK(s.he == (correct > 0 ? 1 : 0));
    CHECK(std::abs(s.se - static_cast<double>(correct) / n) <= 1e-15);
    REQUIRE(stub.fingerprints.size() == static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      CHECK(stub.fingerprints[j] == num::RngStream(0, static_cast<std::uint64_t>(f)).split(j).fingerprint());
    }
  }
}

TEST_CASE("step index and budget validation") {
  ScriptedCompleter stub{{"1"}};
  const auto tr = trajectory(1, 0, 6);
  CHECK_THROWS_AS(annotator::mc_annotate_step(stub.fn(), problem(1, "1"), tr, 0, 1, num::RngStream()),
                  std::invalid_argument);
  CHECK_THROWS_AS(annotator::mc_annotate_step(stub.fn(), problem(1, "1"), tr, 7, 1, num::RngStream()),
                  std::invalid_argument);
  CHECK_THROWS_AS(annotator::mc_annotate_step(stub.fn(), problem(1, "1"), tr, 1, 0, num::RngStream()),
                  std::invalid_argument);
}

TEST_CASE("corpus annotation keeps one trajectory per answer and labels every step") {
  const int T = 6;
  std::vector<task::Problem> problems{problem(10, "3"), problem(11, "8")};
  std::vector<sampler::CandidateSet> sampled(2);
  const std::vector<std::vector<std::string>> answers{{"3", "4", "3", "∅"}, {"8", "8", "8"}};
  for (std::size_t p = 0; p < 2; ++p) {
    sampled[p].problem_id = problems[p].id;
    for (std::size_t j = 0; j < answers[p].size(); ++j) sampled[p].candidates.push_back(trajectory(problems[p].id, j, T));
    sampled[p].answers = answers[p];
    sampled[p].groups = sampler::dedup(answers[p]);
  }
  // 4 survivors × 6 steps × 2 completions.
  std::vector<std::string> script;
  for (int k = 0; k < 4 * T * 2; ++k) script.push_back(k % 3 == 0 ? "3" : "8");
  ScriptedCompleter stub{script};
  const auto r = annotator::annotate_corpus(sampled, stub.fn(), problems, T, 2, num::RngStream(0, 5));
  REQUIRE(r.survivors.size() == 2u);
  CHECK(r.survivors[0].candidates.size() == 3u);
  CHECK(r.survivors[1].candidates.size() == 1u);
  CHECK(r.survivors[0].candidates[2].sample_index == 3u);
  CHECK(r.survivors_per_problem == 2.0);
  REQUIRE(r.steps.size() == 4u * T);
  REQUIRE(r.outcomes.size() == 4u);
  CHECK(r.outcomes[0].r_out == 1);
  CHECK(r.outcomes[1].r_out == 0);
  CHECK(r.outcomes[2].r_out == 0);
  CHECK(r.outcomes[3].r_out == 1);
  CHECK(r.outcomes[2].trajectory_ref == "p10/s3");
  for (std::size_t k = 0; k < r.steps.size(); ++k) {
    const auto& s = r.steps[k];
    CHECK(s.step == static_cast<int>(k % T) + 1);
    const std::string truth = k < 3u * T ? "3" : "8";
    const int expect = (script[2 * k] == truth) + (script[2 * k + 1] == truth);
    CHECK(s.mc_correct == expect);
    CHECK(stub.prefix_lengths[2 * k] == static_cast<std::size_t>(s.step));
  }
}

TEST_CASE("balancing downsamples the majority class in input order") {
  std::vector<annotator::AnnotatedStep> steps;
  for (int k = 0; k < 30; ++k) steps.push_back({"p0/s" + std::to_string(k), 1, k % 4 == 0 ? 0 : 1, 0.5, 2, 1});
  const auto bal = annotator::build_prm_dataset(steps, num::RngStream(0, 1));
  int pos = 0, neg = 0;
  for (const auto& s : bal) (s.he ? pos : neg)++;
  CHECK(pos == 8);
  CHECK(neg == 8);
  for (std::size_t k = 1; k < bal.size(); ++k) {
    CHECK(std::stoi(bal[k - 1].trajectory_ref.substr(4)) < std::stoi(bal[k].trajectory_ref.substr(4)));
  }
  CHECK(annotator::build_prm_dataset(steps, num::RngStream(0, 1)).size() == bal.size());
  std::vector<annotator::AnnotatedStep> one_class(3, {"p0/s0", 1, 1, 1.0, 1, 1});
  CHECK_THROWS_AS(annotator::build_prm_dataset(one_class, num::RngStream()), std::runtime_error);
  std::vector<annotator::OutcomeLabel> outcomes{{"a", 1}, {"b", 1}, {"c", 0}};
  CHECK(annotator::build_orm_dataset(outcomes, num::RngStream(0, 2)).size() == 2u);
}

TEST_CASE("annotation files round trip") {
  std::vector<annotator::AnnotatedStep> steps{{"p1/s0", 1, 1, 0.3, 10, 3}, {"p1/s0", 2, 0, 0.0, 10, 0}};
  const auto back = annotator::steps_from_jsonl(annotator::steps_to_jsonl(steps));
  REQUIRE(back.size() == 2u);
  CHECK(back[0].se == 0.3);
  CHECK(back[1].he == 0);
  std::vector<annotator::OutcomeLabel> o{{"p1/s0", 1}};
  CHECK(annotator::outcomes_from_jsonl(annotator::outcomes_to_jsonl(o))[0].r_out == 1);
}
