#include <stdexcept>

#include "doctest.h"
#include "latentscale/sampler.hpp"

using namespace latentscale;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.vocab_size = static_cast<int>(task::Vocabulary().size());
  c.max_seq_len = 64;
  c.dropout_rate = 0.3;
  return c;
}

sampler::CandidateSet answers_only(std::vector<std::string> answers) {
  sampler::CandidateSet s;
  s.candidates.resize(answers.size());
  s.groups = sampler::dedup(answers);
  s.answers = std::move(answers);
  return s;
}

task::Problem problem(std::uint64_t id) {
  task::Problem p;
  p.id = id;
  p.prompt = "ann has 7 add 5 times 3";
  p.steps = {"7+5=12", "12*3=36"};
  p.answer = "36";
  return p;
}

}  // namespace

TEST_CASE("dedup keeps first-appearance order") {
  const auto g = sampler::dedup({"4", "7", "4", "∅", "7", "4"});
  REQUIRE(g.size() == 3u);
  CHECK(g[0].answer == "4");
  CHECK(g[0].indices == std::vector<std::size_t>{0, 2, 5});
  CHECK(g[1].indices == std::vector<std::size_t>{1, 4});
  CHECK(g[2].answer == "∅");
  CHECK(sampler::dedup({}).empty());
}

TEST_CASE("pass at n and answer statistics") {
  std::vector<sampler::CandidateSet> sets{answers_only({"1", "2", "3", "3"}), answers_only({"5", "5", "5", "9"})};
  const std::vector<std::string> truth{"3", "9"};
  CHECK(sampler::pass_at_n(sets, truth, 1) == 0.0);
  CHECK(sampler::pass_at_n(sets, truth, 3) == 0.5);
  CHECK(sampler::pass_at_n(sets, truth, 4) == 1.0);
  const auto st = sampler::answer_stats(sets, truth, 4);
  CHECK(st.unique == doctest::Approx(2.5));
  CHECK(st.correct == doctest::Approx(1.5));
  CHECK(st.majority_incorrect == doctest::Approx(2.0));
  CHECK_THROWS_AS(sampler::pass_at_n(sets, {"3"}, 1), std::invalid_argument);
}

TEST_CASE("pass at n is non-decreasing in n") {
  num::RngStream rng(5, 0);
  std::vector<sampler::CandidateSet> sets;
  std::vector<std::string> truth;
  for (int p = 0; p < 50; ++p) {
    std::vector<std::string> a;
    for (int j = 0; j < 32; ++j) a.push_back(std::to_string(rng.below(6)));
    sets.push_back(answers_only(a));
    truth.push_back("0");
  }
  double prev = 0.0;
  for (std::size_t n = 1; n <= 32; ++n) {
    const double v = sampler::pass_at_n(sets, truth, n);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("sampling is deterministic per stream and differs across samples") {
  task::Vocabulary vocab;
  model::Transformer m(tiny_config(), num::RngStream(1, 0));
  const auto a = sampler::sample_candidates(m, vocab, problem(3), 4, num::RngStream(0, 7));
  const auto b = sampler::sample_candidates(m, vocab, problem(3), 4, num::RngStream(0, 7));
  REQUIRE(a.candidates.size() == 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(a.candidates[j].thoughts == b.candidates[j].thoughts);
    CHECK(a.candidates[j].answer_tokens == b.candidates[j].answer_tokens);
    CHECK(a.candidates[j].sample_index == j);
    CHECK(a.candidates[j].problem_id == 3u);
  }
  CHECK(a.candidates[0].thoughts != a.candidates[1].thoughts);
  const auto other = sampler::sample_candidates(m, vocab, problem(4), 1, num::RngStream(0, 7));
  CHECK(other.candidates[0].thoughts != a.candidates[0].thoughts);
  // A prefix of a larger draw equals the smaller draw.
  const auto big = sampler::sample_candidates(m, vocab, problem(3), 8, num::RngStream(0, 7));
  for (std::size_t j = 0; j < 4; ++j) CHECK(big.candidates[j].thoughts == a.candidates[j].thoughts);
}

TEST_CASE("dropout-free sampling repeats one trajectory") {
  task::Vocabulary vocab;
  model::Transformer m(tiny_config(), num::RngStream(1, 0));
  const auto s = sampler::sample_candidates(m, vocab, problem(3), 3, num::RngStream(0, 7), false);
  CHECK(s.candidates[0].thoughts == s.candidates[2].thoughts);
  CHECK(s.groups.size() == 1u);
}

TEST_CASE("trajectory store round trip is exact") {
  task::Vocabulary vocab;
  model::Transformer m(tiny_config(), num::RngStream(1, 0));
  std::vector<sampler::CandidateSet> sets{sampler::sample_candidates(m, vocab, problem(1), 3, num::RngStream(0, 7)),
                                          sampler::sample_candidates(m, vocab, problem(2), 2, num::RngStream(0, 7))};
  const auto text = sampler::to_jsonl(sets);
  const auto back = sampler::from_jsonl(text, vocab);
  REQUIRE(back.size() == 2u);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(back[p].problem_id == sets[p].problem_id);
    REQUIRE(back[p].candidates.size() == sets[p].candidates.size());
    CHECK(back[p].answers == sets[p].answers);
    for (std::size_t j = 0; j < sets[p].candidates.size(); ++j) {
      const auto& x = back[p].candidates[j];
      const auto& y = sets[p].candidates[j];
      CHECK(x.thoughts == y.thoughts);
      CHECK(x.answer_tokens == y.answer_tokens);
      CHECK(x.answer_logprob == y.answer_logprob);
      CHECK(x.rng_fingerprint == y.rng_fingerprint);
      CHECK(x.truncated == y.truncated);
    }
  }
  CHECK(sampler::to_jsonl(back) == text);
}
