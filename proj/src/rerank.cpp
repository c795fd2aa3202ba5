#include "latentscale/rerank.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latentscale/io.hpp"

namespace latentscale::rerank {

namespace {

const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::last: return "last";
    case Aggregation::min: return "min";
    case Aggregation::max: return "max";
    default: return "mean";
  }
}

template <class Score>
std::size_t first_argmax(std::size_t n, Score score) {
  std::size_t best = 0;
  double best_value = score(0);
  for (std::size_t i = 1; i < n; ++i) {
    const double v = score(i);
    if (v > best_value) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

}  // namespace

std::string Strategy::name() const {
  switch (kind) {
    case Kind::confidence: return "confidence";
    case Kind::self_consistency: return "self_consistency";
    case Kind::orm: return "orm";
    case Kind::oracle: return "oracle";
    default: return std::string("prm-") + (stream == Stream::he ? "he-" : "se-") + aggregation_name(aggregation);
  }
}

Strategy Strategy::parse(const std::string& name) {
  if (name == "confidence") return {Kind::confidence};
  if (name == "self_consistency") return {Kind::self_consistency};
  if (name == "orm") return {Kind::orm};
  if (name == "oracle") return {Kind::oracle};
  for (Stream s : {Stream::he, Stream::se}) {
    for (Aggregation a : {Aggregation::last, Aggregation::min, Aggregation::max, Aggregation::mean}) {
      Strategy st{Kind::prm, a, s};
      if (st.name() == name) return st;
    }
  }
  throw std::invalid_argument("unknown rerank strategy '" + name + "'");
}

double aggregate(std::span<const double> s, Aggregation aggregation) {
  if (s.empty()) throw std::invalid_argument("aggregate: no step scores");
  switch (aggregation) {
    case Aggregation::last: return s.back();
    case Aggregation::min: return *std::min_element(s.begin(), s.end());
    case Aggregation::max: return *std::max_element(s.begin(), s.end());
    default: return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  }
}

std::size_t rerank(const sampler::CandidateSet& set, const Strategy& strategy, const CandidateScores* scores,
                   std::size_t n, const std::string& truth) {
  if (set.candidates.empty()) throw std::invalid_argument("rerank: empty candidate set");
  if (n == 0 || n > set.candidates.size()) n = set.candidates.size();
  switch (strategy.kind) {
    case Kind::confidence:
      return first_argmax(n, [&](std::size_t i) { return set.candidates[i].answer_logprob; });
    case Kind::self_consistency: {
      const std::vector<std::string> answers(set.answers.begin(), set.answers.begin() + static_cast<std::ptrdiff_t>(n));
      const auto groups = sampler::dedup(answers);
      const auto best = first_argmax(groups.size(), [&](std::size_t g) { return static_cast<double>(groups[g].indices.size()); });
      return groups[best].indices.front();
    }
    case Kind::prm: {
      if (scores == nullptr || scores->prm.size() < n) throw std::invalid_argument("strategy " + strategy.name() + " requires PRM scores");
      return first_argmax(n, [&](std::size_t i) {
        const auto& s = scores->prm[i];
        return aggregate(strategy.stream == Stream::he ? s.he_prob : s.se_pred, strategy.aggregation);
      });
    }
    case Kind::orm:
      if (scores == nullptr || scores->orm.size() < n) throw std::invalid_argument("strategy orm requires ORM scores");
      return first_argmax(n, [&](std::size_t i) { return scores->orm[i]; });
    case Kind::oracle:
      for (std::size_t i = 0; i < n; ++i) {
        if (set.answers[i] == truth) return i;
      }
      return 0;
  }
  return 0;
}

BonTable bon_eval(const std::vector<sampler::CandidateSet>& sets, const std::vector<std::string>& truths,
                  const std::vector<CandidateScores>& scores, const std::vector<Strategy>& strategies,
                  const std::vector<std::size_t>& grid) {
  if (sets.size() != truths.size()) throw std::invalid_argument("bon_eval: sets and truths differ in length");
  if (!scores.empty() && scores.size() != sets.size()) throw std::invalid_argument("bon_eval: scores misaligned");
  if (grid.empty()) throw std::invalid_argument("bon_eval: empty N grid");
  BonTable t;
  t.grid = grid;
  for (std::size_t n : grid) {
    t.pass_at.push_back(sampler::pass_at_n(sets, truths, n));
    t.stats.push_back(sampler::answer_stats(sets, truths, n));
  }
  for (const auto& st : strategies) {
    t.strategies.push_back(st.name());
    std::vector<double> row;
    for (std::size_t n : grid) {
      std::size_t hits = 0;
      for (std::size_t p = 0; p < sets.size(); ++p) {
        const CandidateScores* sc = scores.empty() ? nullptr : &scores[p];
        hits += sets[p].answers[rerank(sets[p], st, sc, n, truths[p])] == truths[p];
      }
      row.push_back(static_cast<double>(hits) / static_cast<double>(sets.size()));
    }
    t.accuracy.push_back(std::move(row));
  }
  return t;
}

std::string bon_csv(const BonTable& t) {
  std::ostringstream out;
  out << "N,pass_at_n,unique,correct,major_incorrect";
  for (const auto& s : t.strategies) out << ',' << s;
  out << '\n';
  for (std::size_t g = 0; g < t.grid.size(); ++g) {
    out << t.grid[g] << ',' << io::format_double(t.pass_at[g]) << ',' << io::format_double(t.stats[g].unique) << ','
        << io::format_double(t.stats[g].correct) << ',' << io::format_double(t.stats[g].majority_incorrect);
    for (const auto& row : t.accuracy) out << ',' << io::format_double(row[g]);
    out << '\n';
  }
  return out.str();
}

nlohmann::ordered_json bon_json(const BonTable& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < t.grid.size(); ++g) {
    nlohmann::ordered_json row;
    row["N"] = t.grid[g];
    row["pass_at_n"] = t.pass_at[g];
    row["unique"] = t.stats[g].unique;
    row["correct"] = t.stats[g].correct;
    row["major_incorrect"] = t.stats[g].majority_incorrect;
    for (std::size_t s = 0; s < t.strategies.size(); ++s) row[t.strategies[s]] = t.accuracy[s][g];
    j.push_back(row);
  }
  return j;
}

ClassificationReport classification_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("classification_metrics: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("classification_metrics: empty input");
  ClassificationReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool l = labels[i] != 0;
    if (p && l) ++r.tp;
    else if (p) ++r.fp;
    else if (l) ++r.fn;
    else ++r.tn;
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  r.accuracy = ratio(r.tp + r.tn, predictions.size());
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.specificity = ratio(r.tn, r.tn + r.fp);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

nlohmann::ordered_json report_json(const ClassificationReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["specificity"] = r.specificity;
  j["confusion"] = {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}};
  return j;
}

std::string reports_csv(const std::vector<std::pair<std::string, ClassificationReport>>& rows) {
  std::ostringstream out;
  out << "model,accuracy,precision,recall,f1,specificity,tp,fp,tn,fn\n";
  for (const auto& [name, r] : rows) {
    out << name << ',' << io::format_double(r.accuracy) << ',' << io::format_double(r.precision) << ','
        << io::format_double(r.recall) << ',' << io::format_double(r.f1) << ',' << io::format_double(r.specificity)
        << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << '\n';
  }
  return out.str();
}

}  // namespace latentscale::rerank
