#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentscale/reward.hpp"
#include "latentscale/sampler.hpp"

namespace latentscale::rerank {

enum class Kind { confidence, self_consistency, prm, orm, oracle };
enum class Aggregation { last, min, max, mean };
enum class Stream { he, se };

struct Strategy {
  Kind kind = Kind::confidence;
  Aggregation aggregation = Aggregation::last;  // prm only
  Stream stream = Stream::he;                   // prm only

  /// e.g. "confidence", "prm-he-last", "orm".
  std::string name() const;
  /// Inverse of name(); throws std::invalid_argument on unknown names.
  static Strategy parse(const std::string& name);
};

/// Reward scores for every candidate of one problem, in sampling order.
struct CandidateScores {
  std::vector<reward::PrmScore> prm;
  std::vector<double> orm;
};

double aggregate(std::span<const double> step_scores, Aggregation aggregation);

/// Index of the selected candidate among the first `n` (0 = all). Ties go to
/// the earliest sample. `truth` is used only by the oracle strategy.
std::size_t rerank(const sampler::CandidateSet& set, const Strategy& strategy, const CandidateScores* scores,
                   std::size_t n = 0, const std::string& truth = {});

struct BonTable {
  std::vector<std::size_t> grid;
  std::vector<std::string> strategies;
  std::vector<std::vector<double>> accuracy;  // [strategy][grid index]
  std::vector<double> pass_at;
  std::vector<sampler::AnswerStats> stats;
};

/// `scores` may be empty when no strategy needs reward models.
BonTable bon_eval(const std::vector<sampler::CandidateSet>& sets, const std::vector<std::string>& truths,
                  const std::vector<CandidateScores>& scores, const std::vector<Strategy>& strategies,
                  const std::vector<std::size_t>& grid);

std::string bon_csv(const BonTable& table);
nlohmann::ordered_json bon_json(const BonTable& table);

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Standard binary metrics; ratios with a zero denominator are reported as 0.
ClassificationReport classification_metrics(std::span<const int> predictions, std::span<const int> labels);

nlohmann::ordered_json report_json(const ClassificationReport& r);
std::string reports_csv(const std::vector<std::pair<std::string, ClassificationReport>>& rows);

}  // namespace latentscale::rerank
