// Acceptance suite: one pass/fail line per criterion. Criteria 4-8 run the
// full pipeline (twice, for the determinism check) under the default config.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "latentscale/analysis.hpp"
#include "latentscale/annotator.hpp"
#include "latentscale/pipeline.hpp"
#include "latentscale/rerank.hpp"
#include "latentscale/sampler.hpp"
#include "oracles.hpp"
#include "rm_gradcheck.hpp"
#include "scripted_completer.hpp"

using namespace latentscale;
using nlohmann::ordered_json;
namespace fs = std::filesystem;
namespace pl = latentscale::pipeline;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!ok || notes.size() < 12) notes.push_back(std::string(ok ? "" : "FAILED ") + what);
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

void print(int id, const std::string& title, const Outcome& o) {
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << "\n";
  for (const auto& n : o.notes) std::cout << "    " << n << "\n";
  std::cout.flush();
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = testing::op_gradient_cases();
  for (auto& c : testing::rm_loss_gradient_cases()) cases.push_back(std::move(c));
  double overall = 0.0;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      num::RngStream rng(seed, 0xacce);
      worst = std::max(worst, testing::gradient_error(c.fn, c.inputs(rng)));
    }
    overall = std::max(overall, worst);
    if (!(worst <= 1e-4)) o.require(false, std::string(c.name) + " rel err " + sci(worst));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(overall <= 1e-4, std::to_string(cases.size()) + " ops x 100 seeds, worst rel err " + sci(overall) +
                                 " (<= 1e-4)");
  o.require(secs < 120.0, "runtime " + fmt(secs, 1) + " s (< 120 s)");
  return o;
}

testing::Points random_points(num::RngStream& rng, std::size_t n, std::size_t d) {
  testing::Points p(n, std::vector<double>(d));
  const double scale = 0.5 + 2.0 * rng.uniform();
  for (auto& row : p)
    for (auto& x : row) x = scale * rng.normal();
  return p;
}

Outcome metric_oracles() {
  Outcome o;
  num::RngStream rng(0, 0x0dac1e);
  double iso = 0, hoy = 0, comp = 0, curv = 0, smooth = 0, straight = 0;
  for (int k = 0; k < 100; ++k) {
    auto s = random_points(rng, 20 + rng.below(40), 2 + rng.below(10));
    for (auto& row : s) row[0] *= 1.0 + 3.0 * rng.uniform();
    iso = std::max(iso, std::abs(analysis::isoscore_star(s).score - testing::oracle_isoscore(s)));
    const auto v = random_points(rng, 1, 2 + rng.below(40))[0];
    hoy = std::max(hoy, std::abs(analysis::hoyer(v) - testing::oracle_hoyer(v)));
    const auto p = random_points(rng, 2 + rng.below(8), 2 + rng.below(20));
    const auto dyn = analysis::dynamics(p);
    comp = std::max(comp, std::abs(dyn.compactness - testing::oracle_compactness(p)));
    curv = std::max(curv, std::abs(dyn.curvature - testing::oracle_curvature(p)));
    smooth = std::max(smooth, std::abs(dyn.smoothness - testing::oracle_smoothness(p)));
    straight = std::max(straight, std::abs(dyn.straightness - testing::oracle_straightness(p)));
  }
  const std::map<std::string, double> worst{{"isoscore", iso},   {"hoyer", hoy},         {"compactness", comp},
                                            {"curvature", curv}, {"smoothness", smooth}, {"straightness", straight}};
  std::string line = "100 fixtures, max |diff|:";
  bool ok = true;
  for (const auto& [name, w] : worst) {
    line += " " + name + " " + sci(w);
    ok = ok && w <= 1e-9;
  }
  o.require(ok, line + " (<= 1e-9)");
  o.require(analysis::isoscore_from_eigenvalues({1.0, 1.0}).score == 1.0, "isoscore {1,1} = 1");
  o.require(analysis::isoscore_from_eigenvalues({1.0, 0.0}).score == 0.0, "isoscore {1,0} = 0");
  o.require(analysis::hoyer(std::vector<double>{0.3, 0.3, 0.3, 0.3, 0.3}) == 0.0, "hoyer uniform = 0");
  const auto corner = analysis::dynamics({{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}});
  o.require(std::abs(corner.curvature - M_PI / 2) <= 1e-12, "right angle curvature " + fmt(corner.curvature, 12));
  o.require(std::abs(corner.straightness - std::sqrt(2.0) / 2) <= 1e-12,
            "right angle straightness " + fmt(corner.straightness, 12));
  return o;
}

Outcome annotation_fidelity() {
  Outcome o;
  task::Problem problem;
  problem.id = 7;
  problem.prompt = "ann has 4 add 3 add 5";
  problem.steps = {"4+3=7", "7+5=12"};
  problem.answer = "12";
  model::Trajectory traj;
  traj.problem_id = 7;
  for (int i = 0; i < 6; ++i) traj.thoughts.push_back({0.1 * i, -0.2 * i});

  num::RngStream rng(0, 0x3a1);
  const std::vector<std::string> wrong{"11", "13", "120", "012", "-12", "∅", "1"};
  int exact = 0;
  for (int f = 0; f < 20; ++f) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const int i = 1 + static_cast<int>(rng.below(6));
    const double p_hit = (f % 4 == 0) ? 0.0 : rng.uniform();
    std::vector<std::string> script;
    for (int j = 0; j < n; ++j) script.push_back(rng.uniform() < p_hit ? "12" : wrong[rng.below(wrong.size())]);
    int hits = 0;
    for (const auto& a : script) hits += a == "12";
    const int he = hits > 0 ? 1 : 0;
    const double se = static_cast<double>(hits) / n;

    testing::ScriptedCompleter stub{script};
    const auto s = annotator::mc_annotate_step(stub.fn(), problem, traj, i, n, num::RngStream(1, f));
    bool prefixes = stub.prefix_lengths.size() == static_cast<std::size_t>(n);
    for (auto len : stub.prefix_lengths) prefixes = prefixes && len == static_cast<std::size_t>(i);
    if (s.he == he && std::abs(s.se - se) <= 1e-15 && prefixes) ++exact;
    else o.require(false, "fixture " + std::to_string(f) + ": he " + std::to_string(s.he) + " vs " +
                              std::to_string(he) + ", se " + fmt(s.se, 17) + " vs " + fmt(se, 17));
  }
  o.require(exact == 20, std::to_string(exact) + "/20 fixtures exact (HE equal, SE within 1e-15, prefix = s_1..s_i)");
  return o;
}

// ---- pipeline artifacts ----

std::vector<ordered_json> jsonl(const fs::path& path) {
  std::vector<ordered_json> out;
  std::istringstream in(pl::read_jsonl_artifact(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(ordered_json::parse(line));
  return out;
}

Outcome pipeline_trend(const fs::path& run) {
  Outcome o;
  const auto pass = pl::read_json_artifact(run / "samples/pass_at_n.json");
  const double det = pass["deterministic_accuracy"];
  o.require(det >= 0.90, "deterministic latent accuracy " + fmt(det) + " (>= 0.90) on " +
                             pass["deterministic_problems"].dump() + " test problems");
  std::map<std::size_t, const ordered_json*> rows;
  for (const auto& r : pass["rows"]) rows[r["N"].get<std::size_t>()] = &r;
  const std::vector<std::size_t> grid{1, 2, 4, 8, 16, 32};
  std::string curve = "Pass@N:";
  bool have = true;
  for (auto n : grid) {
    have = have && rows.count(n);
    if (rows.count(n)) curve += " " + fmt((*rows[n])["pass_at_n"].get<double>(), 3);
  }
  o.require(have, "grid covers N = 1,2,4,8,16,32");
  if (!have) return o;
  bool monotone = true;
  for (std::size_t k = 1; k < grid.size(); ++k)
    monotone = monotone && (*rows[grid[k]])["pass_at_n"].get<double>() >= (*rows[grid[k - 1]])["pass_at_n"].get<double>();
  o.require(monotone, curve + " non-decreasing");
  const double gap = (*rows[32])["pass_at_n"].get<double>() - (*rows[1])["pass_at_n"].get<double>();
  o.require(gap >= 0.03, "Pass@32 - Pass@1 = " + fmt(gap) + " (>= 0.03)");
  const double ratio = (*rows[32])["unique"].get<double>() / (*rows[4])["unique"].get<double>();
  o.require(ratio < 8.0, "unique@32 / unique@4 = " + fmt(ratio, 3) + " (< 8)");
  return o;
}

Outcome reranker_sanity(const fs::path& run) {
  Outcome o;
  const auto bon = pl::read_json_artifact(run / "rerank/bon.json");
  bool oracle_exact = true, bounded = true;
  std::size_t strategies = 0;
  for (const auto& row : bon) {
    const double p = row["pass_at_n"];
    oracle_exact = oracle_exact && row["oracle"].get<double>() == p;
    strategies = 0;
    for (const auto& [key, v] : row.items()) {
      if (key == "N" || key == "pass_at_n" || key == "unique" || key == "correct" || key == "major_incorrect") continue;
      ++strategies;
      if (v.get<double>() > p) {
        bounded = false;
        o.require(false, key + " at N=" + row["N"].dump() + " exceeds Pass@N");
      }
    }
  }
  o.require(oracle_exact, "oracle BoN equals Pass@N at every N");
  o.require(bounded, std::to_string(strategies) + " strategies <= Pass@N at every N");

  task::Vocabulary vocab;
  const auto sets = sampler::from_jsonl(pl::read_jsonl_artifact(run / "samples/trajectories.jsonl"), vocab);
  std::map<std::pair<std::uint64_t, std::uint64_t>, ordered_json> by_key;
  for (auto& line : jsonl(run / "rerank/scores.jsonl"))
    by_key[{line["problem_id"].get<std::uint64_t>(), line["sample_index"].get<std::uint64_t>()}] = line;
  std::size_t candidates = 0, ordered = 0, valid = 0, selections = 0;
  bool complete = true;
  for (const auto& s : sets) {
    rerank::CandidateScores sc;
    for (const auto& t : s.candidates) {
      const auto it = by_key.find({s.problem_id, t.sample_index});
      if (it == by_key.end()) {
        complete = false;
        continue;
      }
      reward::PrmScore ps{it->second["prm_he"].get<std::vector<double>>(),
                          it->second["prm_se"].get<std::vector<double>>()};
      for (const auto& stream : {ps.he_prob, ps.se_pred}) {
        const double lo = rerank::aggregate(stream, rerank::Aggregation::min);
        const double mean = rerank::aggregate(stream, rerank::Aggregation::mean);
        const double hi = rerank::aggregate(stream, rerank::Aggregation::max);
        ++candidates;
        ordered += lo <= mean && mean <= hi;
      }
      sc.prm.push_back(std::move(ps));
      sc.orm.push_back(it->second["orm"].get<double>());
    }
    if (sc.prm.size() != s.candidates.size()) continue;
    for (auto stream : {rerank::Stream::he, rerank::Stream::se}) {
      for (auto agg : {rerank::Aggregation::last, rerank::Aggregation::min, rerank::Aggregation::max,
                       rerank::Aggregation::mean}) {
        rerank::Strategy st{rerank::Kind::prm, agg, stream};
        for (std::size_t n : {1, 4, 32}) {
          const std::size_t limit = std::min(n, s.candidates.size());
          const auto idx = rerank::rerank(s, st, &sc, n);
          ++selections;
          valid += idx < limit;
        }
      }
    }
  }
  o.require(complete, "every sampled candidate has reward scores");
  o.require(ordered == candidates && candidates > 0,
            std::to_string(ordered) + "/" + std::to_string(candidates) + " score vectors with min <= mean <= max");
  o.require(valid == selections && selections > 0,
            std::to_string(valid) + "/" + std::to_string(selections) + " PRM selections index a candidate within N");
  return o;
}

bool report_consistent(const ordered_json& r) {
  const double tp = r["confusion"]["tp"], fp = r["confusion"]["fp"], tn = r["confusion"]["tn"],
               fn = r["confusion"]["fn"];
  const double n = tp + fp + tn + fn;
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  const double p = ratio(tp, tp + fp), rec = ratio(tp, tp + fn);
  const double f1 = p + rec == 0.0 ? 0.0 : 2.0 * p * rec / (p + rec);
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  return n > 0 && close(r["accuracy"], ratio(tp + tn, n)) && close(r["precision"], p) && close(r["recall"], rec) &&
         close(r["specificity"], ratio(tn, tn + fp)) && close(r["f1"], f1);
}

Outcome rm_training(const fs::path& run) {
  Outcome o;
  std::size_t reports = 0, consistent = 0;
  for (const std::string kind : {"prm", "orm"}) {
    const auto log = pl::read_json_artifact(run / kind / "train_log.json");
    const auto& epochs = log["epochs"];
    const double first = epochs.front()["mean_loss"], last = epochs.back()["mean_loss"];
    const double drop = 1.0 - last / first;
    o.require(epochs.size() >= 10 && drop >= 0.5, kind + " loss epoch 1 " + fmt(first) + " -> epoch " +
                                                       std::to_string(epochs.size()) + " " + fmt(last) + ", drop " +
                                                       fmt(100 * drop, 1) + "% (>= 50%)");
    const auto& h = log["holdout"];
    const double acc = h["report"]["accuracy"], base = h["majority_baseline"];
    o.require(acc >= base, kind + " held-out accuracy " + fmt(acc) + " vs majority baseline " + fmt(base) + " (n=" +
                               h["n"].dump() + ")");
    ++reports;
    consistent += report_consistent(h["report"]);
  }
  for (const auto& row : pl::read_json_artifact(run / "classify/report.json")) {
    ++reports;
    consistent += report_consistent(row["report"]);
  }
  o.require(consistent == reports, std::to_string(consistent) + "/" + std::to_string(reports) +
                                       " classification reports internally consistent");
  return o;
}

Outcome perturbation_trend(const fs::path& run) {
  Outcome o;
  const auto table = pl::read_json_artifact(run / "perturb/table.json");
  std::vector<double> pass;
  std::string curve = "Pass@5 by ratio:";
  for (const auto& r : table) {
    pass.push_back(r["pass_at_n"]);
    curve += " " + fmt(r["ratio"].get<double>(), 1) + "->" + fmt(pass.back(), 3);
  }
  o.require(pass.size() == 6, std::to_string(pass.size()) + " ratios (6)");
  if (pass.size() != 6) return o;
  o.require(pass.back() <= pass.front(), curve);
  int rises = 0;
  for (std::size_t k = 1; k < pass.size(); ++k) rises += pass[k] > pass[k - 1];
  o.require(rises <= 1, std::to_string(rises) + " non-monotone adjacent pairs (<= 1)");
  const double unchanged = table[0]["majority_unchanged_percent"];
  o.require(table[0]["ratio"].get<double>() == 0.0 && unchanged == 100.0,
            "ratio 0 majority unchanged " + fmt(unchanged, 1) + "% (100%)");
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism(const fs::path& a, const fs::path& b) {
  Outcome o;
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files[fs::relative(e.path(), a).string()] = e.path();
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  std::size_t same = 0;
  for (const auto& [rel, path] : files) {
    const fs::path twin = b / rel;
    if (fs::exists(twin) && slurp(path) == slurp(twin)) ++same;
    else o.require(false, rel + " differs");
  }
  o.require(other == files.size(), std::to_string(files.size()) + " vs " + std::to_string(other) + " files");
  o.require(same == files.size() && same > 0,
            std::to_string(same) + "/" + std::to_string(files.size()) + " artifacts byte-identical across reruns");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = "acceptance_runs";
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-w,--work", work, "scratch directory for the two pipeline runs");
  app.add_option("-c,--config", config_path, "config file (default: built-in defaults)");
  app.add_option("-s,--set", overrides, "key=value override");
  CLI11_PARSE(app, argc, argv);

  std::cout << "latentscale acceptance\n";
  const auto c1 = gradient_suite();
  print(1, "gradient suite", c1);
  const auto c2 = metric_oracles();
  print(2, "metric oracle equivalence", c2);
  const auto c3 = annotation_fidelity();
  print(3, "annotation label fidelity", c3);

  pl::RunConfig config = config_path.empty() ? pl::RunConfig() : pl::RunConfig::load(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "bad override " << kv << "\n";
      return 2;
    }
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  const fs::path root(work);
  const fs::path run_a = root / "run_a", run_b = root / "run_b";
  bool pipeline_ok = true;
  for (const auto& dir : {run_a, run_b}) {
    fs::remove_all(dir);
    const auto t0 = std::chrono::steady_clock::now();
    pl::Context ctx{config, dir, false, [](const std::string& m) { std::cerr << m << "\n"; }};
    try {
      pl::run_all(ctx);
    } catch (const std::exception& e) {
      std::cerr << "pipeline failed in " << dir << ": " << e.what() << "\n";
      pipeline_ok = false;
      break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "pipeline " << dir.string() << " finished in " << fmt(secs, 1) << " s\n";
  }

  std::vector<Outcome> outcomes{c1, c2, c3};
  const std::vector<std::pair<int, std::string>> later{{4, "pipeline trend reproduction"},
                                                       {5, "reranker sanity"},
                                                       {6, "reward model training"},
                                                       {7, "perturbation trend"},
                                                       {8, "determinism"}};
  for (const auto& [id, title] : later) {
    Outcome o;
    if (!pipeline_ok) {
      o.require(false, "pipeline did not complete");
    } else {
      try {
        switch (id) {
          case 4: o = pipeline_trend(run_a); break;
          case 5: o = reranker_sanity(run_a); break;
          case 6: o = rm_training(run_a); break;
          case 7: o = perturbation_trend(run_a); break;
          default: o = determinism(run_a, run_b); break;
        }
      } catch (const std::exception& e) {
        o.require(false, std::string("error: ") + e.what());
      }
    }
    print(id, title, o);
    outcomes.push_back(o);
  }
  bool all = true;
  for (const auto& o : outcomes) all = all && o.pass;
  std::cout << (all ? "all criteria passed" : "some criteria failed") << "\n";
  return all ? 0 : 1;
}
