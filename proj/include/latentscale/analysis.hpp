#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentscale/model.hpp"
#include "latentscale/rng.hpp"
#include "latentscale/task.hpp"

namespace latentscale::analysis {

using Vectors = std::vector<std::vector<double>>;

struct IsoScore {
  std::vector<double> eigenvalues;  // descending, clamped at 0
  double delta = 0.0;
  double phi = 0.0;
  double score = 0.0;
  bool rank_deficient = false;  // n <= d
};

/// Score from covariance eigenvalues (d = eigenvalues.size() >= 2).
IsoScore isoscore_from_eigenvalues(std::vector<double> eigenvalues);
/// Eigenvalues of the sample covariance of the rows of `s`, then the chain
/// above. Throws for n < 2, d < 2 or a zero covariance.
IsoScore isoscore_star(const Vectors& s);

enum class HoyerMode {
  printed,   // (sqrt(d) - l1/l2) / sqrt(d - 1)
  standard,  // (sqrt(d) - l1/l2) / (sqrt(d) - 1)
};
double hoyer(std::span<const double> s, HoyerMode mode = HoyerMode::printed);

struct Dynamics {
  double compactness = 0.0;
  double curvature = 0.0;
  double smoothness = 0.0;
  double straightness = 0.0;
};
/// Throws for fewer than two points. Zero displacements contribute a zero
/// angle; a zero path length gives straightness 0.
Dynamics dynamics(const Vectors& points);

struct StatTest {
  std::size_t n_a = 0, n_b = 0;
  double mean_a = 0.0, std_a = 0.0, mean_b = 0.0, std_b = 0.0;
  double t = 0.0, df = 0.0, p_value = 1.0, cohens_d = 0.0;
};
/// Welch two-sided t-test and pooled-std Cohen's d (a minus b).
StatTest group_compare(std::span<const double> a, std::span<const double> b);

struct PerturbRow {
  double ratio = 0.0;
  double unique = 0.0;
  double pass_at_n = 0.0;
  double correct = 0.0;
  double majority_unchanged = 0.0;  // percent of problems
};

struct PerturbConfig {
  std::vector<double> ratios{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t n = 5;
};

/// Samples N dropout trajectories per problem once, then for each ratio
/// replaces every thought by ratio*eps + (1-ratio)*s and decodes with
/// dropout off. eps is zero-mean Gaussian with the per-dimension std of all
/// sampled thoughts; one eps draw per (problem, sample) is reused across
/// ratios.
std::vector<PerturbRow> perturb_sweep(model::Transformer& model, const task::Vocabulary& vocab,
                                      const std::vector<task::Problem>& problems, const PerturbConfig& config,
                                      const num::RngStream& rng);

/// Largest answer group; ties go to the group whose first member came first.
std::string majority_answer(const std::vector<std::string>& answers);

struct LabeledVector {
  std::string trajectory_ref;
  int step = 0;
  std::vector<double> vector;
  int he = 0;
  std::string group;
};
std::string export_labeled_vectors(const std::vector<LabeledVector>& rows);
std::vector<LabeledVector> import_labeled_vectors(std::string_view text);

nlohmann::ordered_json stat_json(const StatTest& s);

}  // namespace latentscale::analysis
