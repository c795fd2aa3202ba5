#include "latentscale/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "latentscale/io.hpp"
#include "latentscale/sampler.hpp"

namespace latentscale::analysis {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> diff(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void mean_std(std::span<const double> v, double& mean, double& std) {
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  std = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

IsoScore isoscore_from_eigenvalues(std::vector<double> eigenvalues) {
  const auto d = static_cast<double>(eigenvalues.size());
  if (eigenvalues.size() < 2) throw std::invalid_argument("isoscore: need d >= 2");
  for (auto& l : eigenvalues) l = std::max(l, 0.0);
  std::sort(eigenvalues.begin(), eigenvalues.end(), std::greater<>());
  const double norm = norm2(eigenvalues);
  if (norm == 0.0) throw std::invalid_argument("isoscore: zero covariance");
  double dev = 0.0;
  for (double l : eigenvalues) {
    const double hat = std::sqrt(d) * l / norm;
    dev += (hat - 1.0) * (hat - 1.0);
  }
  IsoScore r;
  r.eigenvalues = std::move(eigenvalues);
  r.delta = std::sqrt(dev) / std::sqrt(2.0 * (d - std::sqrt(d)));
  // Since sum(hat^2) = d, the isotropy defect reduces to (sum l)^2 / (d sum l^2).
  double sum = 0.0, sq = 0.0;
  for (double l : r.eigenvalues) {
    sum += l;
    sq += l * l;
  }
  r.phi = sum * sum / (d * sq);
  r.score = (sum * sum / sq - 1.0) / (d - 1.0);
  return r;
}

IsoScore isoscore_star(const Vectors& s) {
  if (s.size() < 2) throw std::invalid_argument("isoscore: need at least two vectors");
  const std::size_t d = s.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].size() != d) throw std::invalid_argument("isoscore: ragged input");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s[i][j];
  }
  const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(s.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = solver.eigenvalues();
  IsoScore r = isoscore_from_eigenvalues(std::vector<double>(ev.data(), ev.data() + ev.size()));
  r.rank_deficient = s.size() <= d;
  return r;
}

double hoyer(std::span<const double> s, HoyerMode mode) {
  if (s.size() < 2) throw std::invalid_argument("hoyer: need d >= 2");
  const double l2 = norm2(s);
  if (l2 == 0.0) throw std::invalid_argument("hoyer: zero vector");
  double l1 = 0.0;
  for (double x : s) l1 += std::abs(x);
  const double d = static_cast<double>(s.size());
  const double denom = mode == HoyerMode::printed ? std::sqrt(d - 1.0) : std::sqrt(d) - 1.0;
  return (std::sqrt(d) - l1 / l2) / denom;
}

Dynamics dynamics(const Vectors& p) {
  const std::size_t T = p.size();
  if (T < 2) throw std::invalid_argument("dynamics: need at least two points");
  const std::size_t d = p.front().size();
  Dynamics out;
  std::vector<double> centroid(d, 0.0);
  for (const auto& s : p) {
    if (s.size() != d) throw std::invalid_argument("dynamics: ragged input");
    for (std::size_t j = 0; j < d; ++j) centroid[j] += s[j] / static_cast<double>(T);
  }
  double rg2 = 0.0;
  for (const auto& s : p) {
    const auto delta = diff(s, centroid);
    rg2 += dot(delta, delta);
  }
  out.compactness = std::sqrt(rg2 / static_cast<double>(T));

  std::vector<std::vector<double>> steps;
  double length = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    steps.push_back(diff(p[i + 1], p[i]));
    length += norm2(steps.back());
  }
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const double na = norm2(steps[i - 1]);
    const double nb = norm2(steps[i]);
    if (na == 0.0 || nb == 0.0) continue;
    out.curvature += std::acos(std::clamp(dot(steps[i - 1], steps[i]) / (na * nb), -1.0, 1.0));
  }
  double cos_sum = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    const double na = norm2(p[i]);
    const double nb = norm2(p[i + 1]);
    if (na > 0.0 && nb > 0.0) cos_sum += dot(p[i], p[i + 1]) / (na * nb);
  }
  out.smoothness = cos_sum / static_cast<double>(T - 1);
  out.straightness = length == 0.0 ? 0.0 : norm2(diff(p[T - 1], p[0])) / length;
  return out;
}

StatTest group_compare(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("group_compare: each group needs two values");
  StatTest r;
  r.n_a = a.size();
  r.n_b = b.size();
  mean_std(a, r.mean_a, r.std_a);
  mean_std(b, r.mean_b, r.std_b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = r.std_a * r.std_a / na;
  const double vb = r.std_b * r.std_b / nb;
  if (va + vb == 0.0) throw std::invalid_argument("group_compare: both groups have zero variance");
  r.t = (r.mean_a - r.mean_b) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  const double pooled = std::sqrt(((na - 1.0) * r.std_a * r.std_a + (nb - 1.0) * r.std_b * r.std_b) / (na + nb - 2.0));
  r.cohens_d = (r.mean_a - r.mean_b) / pooled;
  return r;
}

std::string majority_answer(const std::vector<std::string>& answers) {
  const auto groups = sampler::dedup(answers);
  if (groups.empty()) throw std::invalid_argument("majority_answer: no answers");
  std::size_t best = 0;
  for (std::size_t g = 1; g < groups.size(); ++g) {
    if (groups[g].indices.size() > groups[best].indices.size()) best = g;
  }
  return groups[best].answer;
}

std::vector<PerturbRow> perturb_sweep(model::Transformer& model, const task::Vocabulary& vocab,
                                      const std::vector<task::Problem>& problems, const PerturbConfig& config,
                                      const num::RngStream& rng) {
  if (problems.empty()) throw std::invalid_argument("perturb_sweep: no problems");
  if (config.ratios.empty() || config.ratios.front() != 0.0 ||
      !std::is_sorted(config.ratios.begin(), config.ratios.end())) {
    throw std::invalid_argument("perturb_sweep: ratios must ascend from 0.0");
  }
  std::vector<sampler::CandidateSet> sets;
  const num::RngStream sample_rng = rng.split(0);
  for (const auto& p : problems) sets.push_back(sampler::sample_candidates(model, vocab, p, config.n, sample_rng));

  const auto d = static_cast<std::size_t>(model.config().d_model);
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  std::size_t count = 0;
  for (const auto& s : sets) {
    for (const auto& t : s.candidates) {
      for (const auto& th : t.thoughts) {
        ++count;
        for (std::size_t j = 0; j < d; ++j) {
          const double delta = th[j] - mean[j];
          mean[j] += delta / static_cast<double>(count);
          var[j] += delta * (th[j] - mean[j]);
        }
      }
    }
  }
  std::vector<double> stdev(d);
  for (std::size_t j = 0; j < d; ++j) stdev[j] = std::sqrt(var[j] / static_cast<double>(count - 1));

  std::vector<PerturbRow> rows;
  std::vector<std::string> previous_majority;
  for (double ratio : config.ratios) {
    std::vector<sampler::CandidateSet> perturbed;
    std::vector<std::string> truths;
    std::vector<std::string> majority;
    for (std::size_t p = 0; p < problems.size(); ++p) {
      sampler::CandidateSet out;
      out.problem_id = problems[p].id;
      const auto prompt = task::prompt_tokens(vocab, problems[p]);
      for (const auto& t : sets[p].candidates) {
        num::RngStream noise_rng = rng.split({1, problems[p].id, t.sample_index});
        Vectors thoughts = t.thoughts;
        for (auto& th : thoughts) {
          for (std::size_t j = 0; j < d; ++j) {
            const double eps = stdev[j] * noise_rng.normal();
            th[j] = ratio * eps + (1.0 - ratio) * th[j];
          }
        }
        model::Trajectory decoded = model.decode_from_thoughts(prompt, thoughts);
        decoded.problem_id = t.problem_id;
        decoded.sample_index = t.sample_index;
        out.candidates.push_back(std::move(decoded));
      }
      sampler::finalize(out, vocab);
      majority.push_back(majority_answer(out.answers));
      truths.push_back(problems[p].answer);
      perturbed.push_back(std::move(out));
    }
    PerturbRow row;
    row.ratio = ratio;
    row.pass_at_n = sampler::pass_at_n(perturbed, truths, config.n);
    const auto stats = sampler::answer_stats(perturbed, truths, config.n);
    row.unique = stats.unique;
    row.correct = stats.correct;
    if (previous_majority.empty()) {
      row.majority_unchanged = 100.0;
    } else {
      std::size_t same = 0;
      for (std::size_t p = 0; p < majority.size(); ++p) same += majority[p] == previous_majority[p];
      row.majority_unchanged = 100.0 * static_cast<double>(same) / static_cast<double>(majority.size());
    }
    previous_majority = std::move(majority);
    rows.push_back(row);
  }
  return rows;
}

std::string export_labeled_vectors(const std::vector<LabeledVector>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["trajectory_ref"] = r.trajectory_ref;
    j["step"] = r.step;
    j["he"] = r.he;
    j["group"] = r.group;
    j["vector"] = r.vector;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<LabeledVector> import_labeled_vectors(std::string_view text) {
  std::vector<LabeledVector> out;
  for (const auto& j : io::parse_jsonl(text)) {
    out.push_back({j.at("trajectory_ref").get<std::string>(), j.at("step").get<int>(),
                   j.at("vector").get<std::vector<double>>(), j.at("he").get<int>(), j.at("group").get<std::string>()});
  }
  return out;
}

nlohmann::ordered_json stat_json(const StatTest& s) {
  nlohmann::ordered_json j;
  j["n_correct"] = s.n_a;
  j["n_incorrect"] = s.n_b;
  j["mean_correct"] = s.mean_a;
  j["std_correct"] = s.std_a;
  j["mean_incorrect"] = s.mean_b;
  j["std_incorrect"] = s.std_b;
  j["t"] = s.t;
  j["df"] = s.df;
  j["p_value"] = s.p_value;
  j["cohens_d"] = s.cohens_d;
  return j;
}

}  // namespace latentscale::analysis
