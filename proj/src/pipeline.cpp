#include "latentscale/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "latentscale/analysis.hpp"
#include "latentscale/annotator.hpp"
#include "latentscale/io.hpp"
#include "latentscale/rerank.hpp"
#include "latentscale/sampler.hpp"

namespace latentscale::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> d{
      {"seed", "0"},
      {"task.n_train", "8000"},
      {"task.n_test", "500"},
      {"task.min_steps", "2"},
      {"task.max_steps", "4"},
      {"task.max_start", "20"},
      {"task.max_addend", "5"},
      {"task.max_multiplier", "2"},
      {"task.max_value", "120"},
      {"task.test_fraction_percent", "20"},
      {"model.d_model", "64"},
      {"model.n_layers", "2"},
      {"model.n_heads", "4"},
      {"model.ffn_mult", "4"},
      {"model.max_seq_len", "96"},
      {"model.dropout_rate", "0.1"},
      {"model.steps_per_stage", "2"},
      {"model.stages", "3"},
      {"model.max_answer_tokens", "8"},
      {"train.first_stage_epochs", "6"},
      {"train.later_stage_epochs", "3"},
      {"train.final_stage_epochs", "56"},
      {"train.batch_size", "8"},
      {"train.lr", "0.001"},
      {"train.warmup_steps", "100"},
      {"train.grad_clip", "1"},
      {"train.dropout_rate", "-1"},
      {"train.lr_schedule", "cosine"},
      {"train.final_lr_fraction", "0.1"},
      {"sample.grid", "1,2,4,8,16,32"},
      {"sample.n_problems", "200"},
      {"annotate.n_problems", "600"},
      {"annotate.m", "5"},
      {"annotate.n_mc", "10"},
      {"annotate.eval_problems", "100"},
      {"annotate.eval_m", "10"},
      {"annotate.eval_n_mc", "20"},
      {"rm.hidden", "0"},
      {"rm.epochs", "10"},
      {"rm.batch_size", "64"},
      {"rm.lr", "0.002"},
      {"rm.warmup_steps", "20"},
      {"rm.grad_clip", "1"},
      {"rm.freeze_backbone", "false"},
      {"rm.threshold", "0.5"},
      {"rm.holdout_percent", "20"},
      {"analysis.ratios", "0,0.2,0.4,0.6,0.8,1"},
      {"analysis.perturb_n", "5"},
      {"analysis.perturb_problems", "200"},
      {"analysis.hoyer_mode", "printed"},
  };
  return d;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  try {
    return parse(io::read_text(path));
  } catch (const io::MissingArtifact& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::get_int(const std::string& key) const {
  const auto& s = get(key);
  long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& s = get(key);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(get(key))) {
    std::size_t v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size() || v == 0) {
      throw ConfigError(key + ": expected positive integers, got '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) {
    double v = 0.0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size()) throw ConfigError(key + ": bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

std::string RunConfig::text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return io::fnv1a_hex(text()); }

task::TaskConfig RunConfig::task() const {
  task::TaskConfig t;
  t.min_steps = static_cast<int>(get_int("task.min_steps"));
  t.max_steps = static_cast<int>(get_int("task.max_steps"));
  t.max_start = static_cast<int>(get_int("task.max_start"));
  t.max_addend = static_cast<int>(get_int("task.max_addend"));
  t.max_multiplier = static_cast<int>(get_int("task.max_multiplier"));
  t.max_value = static_cast<int>(get_int("task.max_value"));
  t.test_fraction_percent = static_cast<int>(get_int("task.test_fraction_percent"));
  return t;
}

model::ModelConfig RunConfig::model(int vocab_size) const {
  model::ModelConfig m;
  m.d_model = static_cast<int>(get_int("model.d_model"));
  m.n_layers = static_cast<int>(get_int("model.n_layers"));
  m.n_heads = static_cast<int>(get_int("model.n_heads"));
  m.ffn_mult = static_cast<int>(get_int("model.ffn_mult"));
  m.max_seq_len = static_cast<int>(get_int("model.max_seq_len"));
  m.dropout_rate = get_double("model.dropout_rate");
  m.steps_per_stage = static_cast<int>(get_int("model.steps_per_stage"));
  m.stages = static_cast<int>(get_int("model.stages"));
  m.latent_steps = m.steps_per_stage * m.stages;
  m.max_answer_tokens = static_cast<int>(get_int("model.max_answer_tokens"));
  m.vocab_size = vocab_size;
  return m;
}

model::CurriculumConfig RunConfig::curriculum() const {
  model::CurriculumConfig c;
  c.first_stage_epochs = static_cast<int>(get_int("train.first_stage_epochs"));
  c.later_stage_epochs = static_cast<int>(get_int("train.later_stage_epochs"));
  c.final_stage_epochs = static_cast<int>(get_int("train.final_stage_epochs"));
  c.batch_size = static_cast<int>(get_int("train.batch_size"));
  c.adam.peak_lr = get_double("train.lr");
  c.adam.warmup_steps = static_cast<std::size_t>(get_int("train.warmup_steps"));
  c.adam.grad_clip = get_double("train.grad_clip");
  c.dropout_rate = get_double("train.dropout_rate");
  c.cosine_decay = get("train.lr_schedule") == "cosine";
  c.adam.final_lr_fraction = get_double("train.final_lr_fraction");
  return c;
}

reward::RmTrainConfig RunConfig::rm_training() const {
  reward::RmTrainConfig r;
  r.epochs = static_cast<int>(get_int("rm.epochs"));
  r.batch_size = static_cast<int>(get_int("rm.batch_size"));
  r.adam.peak_lr = get_double("rm.lr");
  r.adam.warmup_steps = static_cast<std::size_t>(get_int("rm.warmup_steps"));
  r.adam.grad_clip = get_double("rm.grad_clip");
  r.freeze_backbone = get_bool("rm.freeze_backbone");
  return r;
}

void RunConfig::validate() const {
  auto positive = [&](const char* key) {
    if (get_int(key) <= 0) throw ConfigError(std::string(key) + " must be positive");
  };
  auto non_negative = [&](const char* key) {
    if (get_int(key) < 0) throw ConfigError(std::string(key) + " must not be negative");
  };
  if (get_int("seed") < 0) throw ConfigError("seed must not be negative");
  for (const char* k : {"task.n_train", "task.n_test", "train.batch_size", "sample.n_problems", "annotate.n_problems",
                        "annotate.m", "annotate.n_mc", "annotate.eval_problems", "annotate.eval_m",
                        "annotate.eval_n_mc", "rm.epochs", "rm.batch_size", "analysis.perturb_n",
                        "analysis.perturb_problems"}) {
    positive(k);
  }
  for (const char* k : {"train.first_stage_epochs", "train.later_stage_epochs", "train.warmup_steps", "rm.hidden",
                        "rm.warmup_steps"}) {
    non_negative(k);
  }
  if (get_int("sample.n_problems") > get_int("task.n_test")) throw ConfigError("sample.n_problems exceeds task.n_test");
  if (get_int("annotate.eval_problems") > get_int("task.n_test")) {
    throw ConfigError("annotate.eval_problems exceeds task.n_test");
  }
  if (get_int("analysis.perturb_problems") > get_int("task.n_test")) {
    throw ConfigError("analysis.perturb_problems exceeds task.n_test");
  }
  if (get_int("annotate.n_problems") > get_int("task.n_train")) throw ConfigError("annotate.n_problems exceeds task.n_train");
  const auto holdout = get_int("rm.holdout_percent");
  if (holdout <= 0 || holdout >= 100) throw ConfigError("rm.holdout_percent must lie in (0, 100)");
  const double thr = get_double("rm.threshold");
  if (!(thr > 0.0 && thr < 1.0)) throw ConfigError("rm.threshold must lie in (0, 1)");
  if (!(get_double("train.lr") > 0.0) || !(get_double("rm.lr") > 0.0)) throw ConfigError("learning rates must be positive");
  const double td = get_double("train.dropout_rate");
  if (td >= 1.0) throw ConfigError("train.dropout_rate must lie below 1 (negative means model.dropout_rate)");
  if (get("train.lr_schedule") != "cosine" && get("train.lr_schedule") != "constant") {
    throw ConfigError("train.lr_schedule must be cosine or constant");
  }
  const double lf = get_double("train.final_lr_fraction");
  if (!(lf >= 0.0 && lf <= 1.0)) throw ConfigError("train.final_lr_fraction must lie in [0, 1]");
  get_sizes("sample.grid");
  get_bool("rm.freeze_backbone");
  const auto mode = get("analysis.hoyer_mode");
  if (mode != "printed" && mode != "standard") throw ConfigError("analysis.hoyer_mode must be printed or standard");
  const auto ratios = get_doubles("analysis.ratios");
  if (ratios.front() != 0.0) throw ConfigError("analysis.ratios must start at 0");
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] < 0.0 || ratios[i] > 1.0 || (i > 0 && ratios[i] <= ratios[i - 1])) {
      throw ConfigError("analysis.ratios must ascend within [0, 1]");
    }
  }
  const auto grid = get_sizes("sample.grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("sample.grid must ascend");
  try {
    const auto t = task();
    if (t.min_steps < 1 || t.max_steps < t.min_steps || t.max_start < 0 || t.max_addend < 1 || t.max_multiplier < 2 ||
        t.max_value < 1 || t.test_fraction_percent <= 0 || t.test_fraction_percent >= 100) {
      throw ConfigError("task settings out of range");
    }
    model(static_cast<int>(task::Vocabulary().size())).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

namespace {

// ---------------------------------------------------------------------------
// Artifact plumbing

const std::map<std::string, std::string>& stage_dirs() {
  static const std::map<std::string, std::string> d{
      {"gen-data", "data"},        {"train-model", "model"},      {"sample", "samples"},
      {"annotate", "annotations"}, {"train-prm", "prm"},          {"train-orm", "orm"},
      {"rerank", "rerank"},        {"classify-eval", "classify"}, {"analyze", "analysis"},
      {"perturb", "perturb"},      {"report", "report"}};
  return d;
}

std::string file_hash(const fs::path& path) { return io::fnv1a_hex(io::read_text(path.string())); }

fs::path manifest_path(const Context& ctx, const std::string& stage) {
  return ctx.out_dir / stage_dirs().at(stage) / "manifest.json";
}

json read_manifest(const Context& ctx, const std::string& stage) {
  const fs::path p = manifest_path(ctx, stage);
  if (!fs::exists(p)) {
    throw DependencyError("missing " + p.string() + "; run the '" + stage + "' subcommand first");
  }
  try {
    return json::parse(io::read_text(p.string()));
  } catch (const json::exception& e) {
    throw DependencyError("unreadable manifest " + p.string() + ": " + e.what() + "; rerun '" + stage + "'");
  }
}

std::string config_diff(const json& recorded, const RunConfig& current) {
  std::vector<std::string> diffs;
  for (const auto& [k, v] : current.values()) {
    if (!recorded.contains(k)) {
      diffs.push_back(k + " (absent upstream)");
    } else if (recorded.at(k).get<std::string>() != v) {
      diffs.push_back(k + ": " + recorded.at(k).get<std::string>() + " -> " + v);
    }
  }
  std::string out;
  for (std::size_t i = 0; i < diffs.size() && i < 10; ++i) out += "\n  " + diffs[i];
  if (diffs.size() > 10) out += "\n  ... " + std::to_string(diffs.size() - 10) + " more";
  return out;
}

/// Compares recorded file hashes against the files on disk.
std::vector<std::string> hash_mismatches(const Context& ctx, const json& files) {
  std::vector<std::string> out;
  for (const auto& [rel, h] : files.items()) {
    const fs::path p = ctx.out_dir / rel;
    if (!fs::exists(p)) {
      out.push_back(rel + ": missing on disk");
      continue;
    }
    const std::string now = file_hash(p);
    if (now != h.get<std::string>()) out.push_back(rel + ": manifest " + h.get<std::string>() + ", on disk " + now);
  }
  return out;
}

/// One run of a subcommand: verifies upstream manifests, records inputs and
/// outputs, then writes its own manifest.
class StageRun {
 public:
  StageRun(const Context& ctx, const std::string& name) : ctx_(ctx), name_(name), hash_(ctx.config.hash()) {
    ctx.config.validate();
    const StageInfo* info = nullptr;
    for (const auto& s : stages()) {
      if (s.name == name) info = &s;
    }
    for (const auto& dep : info->depends_on) {
      const json m = read_manifest(ctx, dep);
      if (m.at("config_hash").get<std::string>() != hash_) {
        const std::string msg = "'" + dep + "' artifacts were produced under config " +
                                m.at("config_hash").get<std::string>() + ", current config is " + hash_ +
                                config_diff(m.at("config"), ctx.config);
        if (!ctx.force) throw DependencyError(msg + "\nrerun '" + dep + "' or pass --force");
        log("warning: " + msg);
      }
      auto bad = hash_mismatches(ctx, m.at("outputs"));
      for (const auto& b : hash_mismatches(ctx, m.at("inputs"))) bad.push_back(b + " (input of '" + dep + "')");
      if (!bad.empty()) {
        std::string msg = "input-hash mismatch for '" + dep + "' artifacts:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw DependencyError(msg + "\nrerun '" + dep + "' and everything downstream of it");
      }
      for (const auto& [rel, h] : m.at("outputs").items()) inputs_[rel] = h.get<std::string>();
    }
    start_ = std::chrono::steady_clock::now();
    log(name_ + ": config " + hash_);
  }

  const std::string& hash() const { return hash_; }
  fs::path in(const std::string& rel) const { return ctx_.out_dir / rel; }

  void write(const std::string& rel, const std::string& content) {
    io::write_text((ctx_.out_dir / rel).string(), content);
    outputs_[rel] = io::fnv1a_hex(content);
  }
  void write_json(const std::string& rel, const json& data) {
    json j;
    j["config_hash"] = hash_;
    j["data"] = data;
    write(rel, j.dump(2) + "\n");
  }
  void write_csv(const std::string& rel, const std::string& body) { write(rel, "# config_hash=" + hash_ + "\n" + body); }
  void write_jsonl(const std::string& rel, const std::string& body) {
    json h;
    h["config_hash"] = hash_;
    write(rel, h.dump() + "\n" + body);
  }
  /// For files written by other code (checkpoints).
  void record(const std::string& rel) { outputs_[rel] = file_hash(ctx_.out_dir / rel); }

  void log(const std::string& msg) const {
    if (ctx_.log) ctx_.log(msg);
  }

  void finish() {
    json m;
    m["subcommand"] = name_;
    m["config_hash"] = hash_;
    m["seed"] = ctx_.config.seed();
    json cfg = json::object();
    for (const auto& [k, v] : ctx_.config.values()) cfg[k] = v;
    m["config"] = cfg;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    io::write_text(manifest_path(ctx_, name_).string(), m.dump(2) + "\n");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ostringstream msg;
    msg.precision(1);
    msg << std::fixed << name_ << ": done in " << secs << " s";
    log(msg.str());
  }

 private:
  const Context& ctx_;
  std::string name_;
  std::string hash_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

num::RngStream root_rng(const Context& ctx, std::uint64_t purpose) {
  return num::RngStream(ctx.config.seed(), 0).split(purpose);
}

std::string model_annotation(const std::string& hash) { return "run_config_hash=" + hash + "\n"; }

std::vector<task::Problem> load_problems(const StageRun& run, const std::string& rel) {
  return task::from_jsonl(read_jsonl_artifact(run.in(rel)));
}

std::vector<task::Problem> head(std::vector<task::Problem> v, long n) {
  if (static_cast<long>(v.size()) > n) v.resize(static_cast<std::size_t>(n));
  return v;
}

std::string f(double v) { return io::format_double(v); }

json answer_stats_json(const sampler::AnswerStats& s) {
  json j;
  j["unique"] = s.unique;
  j["correct"] = s.correct;
  j["major_incorrect"] = s.majority_incorrect;
  return j;
}

// ---------------------------------------------------------------------------
// Reward-model data

struct RmCorpus {
  std::vector<reward::RmInput> inputs;
  std::vector<std::uint64_t> problem_of;      // per input
  std::map<std::string, std::size_t> by_ref;  // trajectory_ref -> input
  std::vector<annotator::AnnotatedStep> steps;
  std::vector<annotator::OutcomeLabel> outcomes;
};

RmCorpus load_corpus(const StageRun& run, const std::string& split, const std::vector<task::Problem>& problems) {
  task::Vocabulary vocab;
  std::map<std::uint64_t, const task::Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;
  RmCorpus c;
  const auto sets =
      sampler::from_jsonl(read_jsonl_artifact(run.in("annotations/" + split + "_trajectories.jsonl")), vocab);
  for (const auto& s : sets) {
    const auto it = by_id.find(s.problem_id);
    if (it == by_id.end()) throw DependencyError("annotated problem " + std::to_string(s.problem_id) + " not in data");
    for (const auto& t : s.candidates) {
      c.by_ref[annotator::trajectory_ref(t)] = c.inputs.size();
      c.inputs.push_back({task::prompt_tokens(vocab, *it->second), t.thoughts});
      c.problem_of.push_back(s.problem_id);
    }
  }
  c.steps = annotator::steps_from_jsonl(read_jsonl_artifact(run.in("annotations/" + split + "_steps.jsonl")));
  c.outcomes = annotator::outcomes_from_jsonl(read_jsonl_artifact(run.in("annotations/" + split + "_outcomes.jsonl")));
  for (const auto& s : c.steps) {
    if (!c.by_ref.count(s.trajectory_ref)) throw DependencyError("step label for unknown trajectory " + s.trajectory_ref);
  }
  for (const auto& o : c.outcomes) {
    if (!c.by_ref.count(o.trajectory_ref)) throw DependencyError("outcome for unknown trajectory " + o.trajectory_ref);
  }
  return c;
}

bool held_out(const RunConfig& cfg, std::uint64_t problem_id) {
  const std::uint64_t h = num::mix64(problem_id ^ num::mix64(cfg.seed() + 0x4e1d));
  return static_cast<long>(h % 100) < cfg.get_int("rm.holdout_percent");
}

template <class Item, class Build>
std::pair<std::vector<Item>, std::vector<Item>> split_balanced(const RunConfig& cfg, const RmCorpus& c,
                                                              const std::vector<Item>& items, Build build,
                                                              const num::RngStream& rng, const char* what) {
  std::vector<Item> fit, hold;
  for (const auto& it : items) (held_out(cfg, c.problem_of[c.by_ref.at(it.trajectory_ref)]) ? hold : fit).push_back(it);
  try {
    return {build(fit, rng.split(0)), build(hold, rng.split(1))};
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what() + "; annotate more problems (annotate.n_problems)");
  }
}

json holdout_json(const rerank::ClassificationReport& r, std::size_t positives, std::size_t n) {
  json j;
  j["n"] = n;
  j["positives"] = positives;
  j["majority_baseline"] = n == 0 ? 0.0 : static_cast<double>(std::max(positives, n - positives)) / static_cast<double>(n);
  j["report"] = rerank::report_json(r);
  return j;
}

std::string loss_csv(const std::vector<reward::RmEpoch>& log) {
  std::string out = "epoch,mean_loss\n";
  for (const auto& e : log) out += std::to_string(e.epoch) + "," + f(e.mean_loss) + "\n";
  return out;
}

json loss_json(const std::vector<reward::RmEpoch>& log) {
  json rows = json::array();
  for (const auto& e : log) rows.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
  return rows;
}

// Per-input PRM scores and ORM scores, computed once.
struct CorpusScores {
  std::vector<reward::PrmScore> prm;
  std::vector<double> orm;
};

CorpusScores score_corpus(const StageRun& run, const RmCorpus& c) {
  auto prm = reward::RewardModel::load(run.in("prm/prm.bin").string());
  auto orm = reward::RewardModel::load(run.in("orm/orm.bin").string());
  CorpusScores s;
  for (const auto& in : c.inputs) {
    s.prm.push_back(prm.prm_forward(in));
    s.orm.push_back(orm.orm_forward(in).r_hat);
  }
  return s;
}

std::string table_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out = table_row(header);
  out += "|";
  for (std::size_t i = 0; i < header.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& r : rows) out += table_row(r);
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string cell(const json& v, int digits = 4) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) return fixed(v.get<double>(), digits);
  if (v.is_number()) return std::to_string(v.get<long long>());
  return v.get<std::string>();
}

}  // namespace

std::string read_jsonl_artifact(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path.string());
  } catch (const io::MissingArtifact& e) {
    throw DependencyError(e.what());
  }
  const auto nl = text.find('\n');
  if (nl == std::string::npos || text.compare(0, 15, "{\"config_hash\":") != 0) {
    throw DependencyError(path.string() + " lacks a config-hash header");
  }
  return text.substr(nl + 1);
}

json read_json_artifact(const fs::path& path) {
  try {
    return json::parse(io::read_text(path.string())).at("data");
  } catch (const io::MissingArtifact& e) {
    throw DependencyError(e.what());
  } catch (const json::exception& e) {
    throw DependencyError(path.string() + ": " + e.what());
  }
}

const std::vector<StageInfo>& stages() {
  static const std::vector<StageInfo> s{
      {"gen-data", {}},
      {"train-model", {"gen-data"}},
      {"sample", {"gen-data", "train-model"}},
      {"annotate", {"gen-data", "train-model"}},
      {"train-prm", {"gen-data", "train-model", "annotate"}},
      {"train-orm", {"gen-data", "train-model", "annotate"}},
      {"rerank", {"gen-data", "sample", "train-prm", "train-orm"}},
      {"classify-eval", {"gen-data", "annotate", "train-prm", "train-orm"}},
      {"analyze", {"gen-data", "annotate", "train-prm", "train-orm"}},
      {"perturb", {"gen-data", "train-model"}},
      {"report",
       {"gen-data", "train-model", "sample", "annotate", "train-prm", "train-orm", "rerank", "classify-eval", "analyze",
        "perturb"}},
  };
  return s;
}

void gen_data(const Context& ctx) {
  StageRun run(ctx, "gen-data");
  const auto& c = ctx.config;
  task::Dataset ds;
  try {
    ds = task::generate_dataset(c.task(), static_cast<std::size_t>(c.get_int("task.n_train")),
                                static_cast<std::size_t>(c.get_int("task.n_test")), root_rng(ctx, 1));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  run.write_jsonl("data/train.jsonl", task::to_jsonl(ds.train));
  run.write_jsonl("data/test.jsonl", task::to_jsonl(ds.test));
  json a;
  a["train_problems"] = ds.train.size();
  a["test_problems"] = ds.test.size();
  a["train_templates"] = ds.audit.train_templates;
  a["test_templates"] = ds.audit.test_templates;
  a["shared_templates"] = ds.audit.shared_templates;
  a["test_answers_seen_in_train"] = ds.audit.test_answers_seen_in_train;
  a["shared_prompts"] = ds.audit.shared_prompts;
  a["distinct_train_answers"] = ds.audit.distinct_train_answers;
  run.write_json("data/audit.json", a);
  run.log("overlap audit: " + a.dump());
  run.finish();
}

void train_model(const Context& ctx) {
  StageRun run(ctx, "train-model");
  task::Vocabulary vocab;
  const auto train = load_problems(run, "data/train.jsonl");
  std::vector<model::CurriculumExample> examples;
  for (const auto& p : train) {
    examples.push_back({task::prompt_tokens(vocab, p), task::step_tokens(vocab, p), task::answer_tokens(vocab, p)});
  }
  model::Transformer m(ctx.config.model(static_cast<int>(vocab.size())), root_rng(ctx, 2));
  std::string csv = "stage,epoch,mean_loss\n";
  json rows = json::array();
  m.curriculum_train(examples, ctx.config.curriculum(), root_rng(ctx, 3), [&](const model::EpochLog& e) {
    std::ostringstream msg;
    msg << "stage " << e.stage << " epoch " << e.epoch << " loss " << fixed(e.mean_loss) << " (" << fixed(e.seconds, 1)
        << " s)";
    run.log(msg.str());
    csv += std::to_string(e.stage) + "," + std::to_string(e.epoch) + "," + f(e.mean_loss) + "\n";
    rows.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
  });
  m.save(run.in("model/model.bin").string(), model_annotation(run.hash()));
  run.record("model/model.bin");
  run.write_csv("model/train_log.csv", csv);
  run.write_json("model/train_log.json", rows);
  run.finish();
}

void sample(const Context& ctx) {
  StageRun run(ctx, "sample");
  task::Vocabulary vocab;
  const auto test = load_problems(run, "data/test.jsonl");
  const auto problems = head(test, ctx.config.get_int("sample.n_problems"));
  auto m = model::Transformer::load(run.in("model/model.bin").string());
  const auto grid = ctx.config.get_sizes("sample.grid");
  const num::RngStream rng = root_rng(ctx, 4);
  std::vector<sampler::CandidateSet> sets;
  std::vector<std::string> truths;
  for (const auto& p : problems) {
    sets.push_back(sampler::sample_candidates(m, vocab, p, grid.back(), rng));
    truths.push_back(p.answer);
  }
  const double det = sampler::deterministic_accuracy(m, vocab, test);
  run.log("deterministic latent accuracy " + fixed(det));
  run.write_jsonl("samples/trajectories.jsonl", sampler::to_jsonl(sets));
  std::string csv = "N,pass_at_n,unique,correct,major_incorrect,deterministic\n";
  json rows = json::array();
  for (auto n : grid) {
    const double pass = sampler::pass_at_n(sets, truths, n);
    const auto st = sampler::answer_stats(sets, truths, n);
    csv += std::to_string(n) + "," + f(pass) + "," + f(st.unique) + "," + f(st.correct) + "," +
           f(st.majority_incorrect) + "," + f(det) + "\n";
    json r = answer_stats_json(st);
    r["N"] = n;
    r["pass_at_n"] = pass;
    rows.push_back(r);
  }
  json data;
  data["problems"] = problems.size();
  data["deterministic_accuracy"] = det;
  data["deterministic_problems"] = test.size();
  data["rows"] = rows;
  run.write_csv("samples/pass_at_n.csv", csv);
  run.write_json("samples/pass_at_n.json", data);
  run.finish();
}

void annotate(const Context& ctx) {
  StageRun run(ctx, "annotate");
  task::Vocabulary vocab;
  auto m = model::Transformer::load(run.in("model/model.bin").string());
  const auto& c = ctx.config;
  json summary;
  auto one = [&](const std::string& split, const std::vector<task::Problem>& problems, long mm, long n_mc,
                 std::uint64_t purpose) {
    const auto r = annotator::annotate_corpus(m, vocab, problems, static_cast<int>(mm), static_cast<int>(n_mc),
                                              root_rng(ctx, purpose));
    run.write_jsonl("annotations/" + split + "_trajectories.jsonl", sampler::to_jsonl(r.survivors));
    run.write_jsonl("annotations/" + split + "_steps.jsonl", annotator::steps_to_jsonl(r.steps));
    run.write_jsonl("annotations/" + split + "_outcomes.jsonl", annotator::outcomes_to_jsonl(r.outcomes));
    std::size_t he = 0, out = 0;
    for (const auto& s : r.steps) he += static_cast<std::size_t>(s.he);
    for (const auto& o : r.outcomes) out += static_cast<std::size_t>(o.r_out);
    json j;
    j["problems"] = problems.size();
    j["m"] = mm;
    j["n_mc"] = n_mc;
    j["trajectories"] = r.outcomes.size();
    j["survivors_per_problem"] = r.survivors_per_problem;
    j["steps"] = r.steps.size();
    j["positive_steps"] = he;
    j["correct_trajectories"] = out;
    summary[split] = j;
    run.log(split + " annotation: " + j.dump());
  };
  one("train", head(load_problems(run, "data/train.jsonl"), c.get_int("annotate.n_problems")), c.get_int("annotate.m"),
      c.get_int("annotate.n_mc"), 5);
  one("eval", head(load_problems(run, "data/test.jsonl"), c.get_int("annotate.eval_problems")),
      c.get_int("annotate.eval_m"), c.get_int("annotate.eval_n_mc"), 6);
  run.write_json("annotations/summary.json", summary);
  run.finish();
}

namespace {

void train_reward(const Context& ctx, reward::RmKind kind) {
  const bool is_prm = kind == reward::RmKind::prm;
  const std::string name = is_prm ? "prm" : "orm";
  StageRun run(ctx, is_prm ? "train-prm" : "train-orm");
  const auto& c = ctx.config;
  const auto corpus = load_corpus(run, "train", load_problems(run, "data/train.jsonl"));
  auto backbone = model::Transformer::load(run.in("model/model.bin").string());
  reward::RewardModel rm(kind, std::move(backbone), static_cast<std::size_t>(c.get_int("rm.hidden")),
                         root_rng(ctx, is_prm ? 7 : 9));
  const double threshold = c.get_double("rm.threshold");
  auto on_epoch = [&](const reward::RmEpoch& e) { run.log(name + " epoch " + std::to_string(e.epoch) + " loss " + fixed(e.mean_loss)); };
  std::vector<reward::RmEpoch> log;
  json data;
  std::vector<int> pred, gold;
  std::size_t n_fit = 0;
  if (is_prm) {
    const auto [fit, hold] = split_balanced(c, corpus, corpus.steps, annotator::build_prm_dataset, root_rng(ctx, 11), "PRM");
    std::vector<reward::PrmExample> ex;
    for (const auto& s : fit) {
      ex.push_back({corpus.by_ref.at(s.trajectory_ref), s.step, static_cast<double>(s.he), s.se});
    }
    n_fit = ex.size();
    log = rm.train_prm(corpus.inputs, ex, c.rm_training(), root_rng(ctx, 8), on_epoch);
    for (const auto& s : hold) {
      const auto score = rm.prm_forward(corpus.inputs[corpus.by_ref.at(s.trajectory_ref)]);
      pred.push_back(score.he_prob[static_cast<std::size_t>(s.step - 1)] >= threshold ? 1 : 0);
      gold.push_back(s.he);
    }
  } else {
    const auto [fit, hold] =
        split_balanced(c, corpus, corpus.outcomes, annotator::build_orm_dataset, root_rng(ctx, 12), "ORM");
    std::vector<reward::OrmExample> ex;
    for (const auto& o : fit) ex.push_back({corpus.by_ref.at(o.trajectory_ref), static_cast<double>(o.r_out)});
    n_fit = ex.size();
    log = rm.train_orm(corpus.inputs, ex, c.rm_training(), root_rng(ctx, 10), on_epoch);
    for (const auto& o : hold) {
      pred.push_back(rm.orm_forward(corpus.inputs[corpus.by_ref.at(o.trajectory_ref)]).r_hat >= threshold ? 1 : 0);
      gold.push_back(o.r_out);
    }
  }
  rm.save(run.in(name + "/" + name + ".bin").string(), model_annotation(run.hash()));
  run.record(name + "/" + name + ".bin");
  run.write_csv(name + "/train_log.csv", loss_csv(log));
  data["train_examples"] = n_fit;
  data["epochs"] = loss_json(log);
  std::size_t positives = 0;
  for (int g : gold) positives += static_cast<std::size_t>(g);
  data["holdout"] = gold.empty() ? json(nullptr)
                                 : holdout_json(rerank::classification_metrics(pred, gold), positives, gold.size());
  run.write_json(name + "/train_log.json", data);
  run.finish();
}

}  // namespace

void train_prm(const Context& ctx) { train_reward(ctx, reward::RmKind::prm); }
void train_orm(const Context& ctx) { train_reward(ctx, reward::RmKind::orm); }

namespace {

std::vector<rerank::Strategy> all_strategies() {
  std::vector<rerank::Strategy> out{rerank::Strategy::parse("confidence"), rerank::Strategy::parse("self_consistency")};
  for (auto stream : {rerank::Stream::he, rerank::Stream::se}) {
    for (auto agg : {rerank::Aggregation::last, rerank::Aggregation::min, rerank::Aggregation::max,
                     rerank::Aggregation::mean}) {
      out.push_back({rerank::Kind::prm, agg, stream});
    }
  }
  out.push_back(rerank::Strategy::parse("orm"));
  out.push_back(rerank::Strategy::parse("oracle"));
  return out;
}

}  // namespace

void rerank(const Context& ctx) {
  StageRun run(ctx, "rerank");
  task::Vocabulary vocab;
  const auto test = load_problems(run, "data/test.jsonl");
  std::map<std::uint64_t, const task::Problem*> by_id;
  for (const auto& p : test) by_id[p.id] = &p;
  const auto sets = sampler::from_jsonl(read_jsonl_artifact(run.in("samples/trajectories.jsonl")), vocab);
  auto prm = reward::RewardModel::load(run.in("prm/prm.bin").string());
  auto orm = reward::RewardModel::load(run.in("orm/orm.bin").string());
  std::vector<std::string> truths;
  std::vector<rerank::CandidateScores> scores;
  std::string score_lines;
  for (const auto& s : sets) {
    const auto it = by_id.find(s.problem_id);
    if (it == by_id.end()) throw DependencyError("sampled problem " + std::to_string(s.problem_id) + " not in test data");
    truths.push_back(it->second->answer);
    const auto prompt = task::prompt_tokens(vocab, *it->second);
    rerank::CandidateScores sc;
    for (const auto& t : s.candidates) {
      const reward::RmInput in{prompt, t.thoughts};
      sc.prm.push_back(prm.prm_forward(in));
      sc.orm.push_back(orm.orm_forward(in).r_hat);
      json j;
      j["problem_id"] = s.problem_id;
      j["sample_index"] = t.sample_index;
      j["prm_he"] = sc.prm.back().he_prob;
      j["prm_se"] = sc.prm.back().se_pred;
      j["orm"] = sc.orm.back();
      score_lines += j.dump() + "\n";
    }
    scores.push_back(std::move(sc));
  }
  const auto table = rerank::bon_eval(sets, truths, scores, all_strategies(), ctx.config.get_sizes("sample.grid"));
  run.write_jsonl("rerank/scores.jsonl", score_lines);
  run.write_csv("rerank/bon.csv", rerank::bon_csv(table));
  run.write_json("rerank/bon.json", rerank::bon_json(table));
  run.finish();
}

void classify_eval(const Context& ctx) {
  StageRun run(ctx, "classify-eval");
  const auto corpus = load_corpus(run, "eval", load_problems(run, "data/test.jsonl"));
  const auto scores = score_corpus(run, corpus);
  const double threshold = ctx.config.get_double("rm.threshold");
  std::vector<int> prm_pred, prm_gold, orm_pred, orm_gold;
  for (const auto& s : corpus.steps) {
    const auto& p = scores.prm[corpus.by_ref.at(s.trajectory_ref)];
    prm_pred.push_back(p.he_prob[static_cast<std::size_t>(s.step - 1)] >= threshold ? 1 : 0);
    prm_gold.push_back(s.he);
  }
  for (const auto& o : corpus.outcomes) {
    orm_pred.push_back(scores.orm[corpus.by_ref.at(o.trajectory_ref)] >= threshold ? 1 : 0);
    orm_gold.push_back(o.r_out);
  }
  std::vector<std::pair<std::string, rerank::ClassificationReport>> rows;
  json data = json::array();
  auto add = [&](const std::string& name, const std::vector<int>& pred, const std::vector<int>& gold) {
    if (gold.empty()) throw DependencyError("no " + name + " labels in the evaluation annotations");
    const auto r = rerank::classification_metrics(pred, gold);
    rows.emplace_back(name, r);
    std::size_t positives = 0;
    for (int g : gold) positives += static_cast<std::size_t>(g);
    json j = holdout_json(r, positives, gold.size());
    j["model"] = name;
    data.push_back(j);
  };
  add("PRM", prm_pred, prm_gold);
  add("ORM", orm_pred, orm_gold);
  run.write_csv("classify/report.csv", rerank::reports_csv(rows));
  run.write_json("classify/report.json", data);
  run.finish();
}

namespace {

json isotropy_cell(const analysis::Vectors& v) {
  json j;
  j["n"] = v.size();
  try {
    const auto iso = analysis::isoscore_star(v);
    j["isoscore"] = iso.score;
    j["rank_deficient"] = iso.rank_deficient;
  } catch (const std::invalid_argument&) {
    j["isoscore"] = nullptr;
    j["rank_deficient"] = true;
  }
  return j;
}

json hoyer_cell(const analysis::Vectors& v, analysis::HoyerMode mode) {
  json j;
  if (v.empty()) {
    j["hoyer_mean"] = nullptr;
    j["hoyer_std"] = nullptr;
    return j;
  }
  std::vector<double> h;
  for (const auto& x : v) h.push_back(analysis::hoyer(x, mode));
  double mean = 0.0;
  for (double x : h) mean += x;
  mean /= static_cast<double>(h.size());
  double var = 0.0;
  for (double x : h) var += (x - mean) * (x - mean);
  j["hoyer_mean"] = mean;
  j["hoyer_std"] = h.size() > 1 ? std::sqrt(var / static_cast<double>(h.size() - 1)) : 0.0;
  return j;
}

json compare_cell(const std::vector<double>& correct, const std::vector<double>& incorrect) {
  try {
    return analysis::stat_json(analysis::group_compare(correct, incorrect));
  } catch (const std::invalid_argument& e) {
    json j;
    j["n_correct"] = correct.size();
    j["n_incorrect"] = incorrect.size();
    j["p_value"] = nullptr;
    j["cohens_d"] = nullptr;
    j["note"] = e.what();
    return j;
  }
}

}  // namespace

void analyze(const Context& ctx) {
  StageRun run(ctx, "analyze");
  const auto corpus = load_corpus(run, "eval", load_problems(run, "data/test.jsonl"));
  const auto scores = score_corpus(run, corpus);
  const double threshold = ctx.config.get_double("rm.threshold");
  const auto mode = ctx.config.get("analysis.hoyer_mode") == "standard" ? analysis::HoyerMode::standard
                                                                         : analysis::HoyerMode::printed;

  // Thought-level groups.
  std::map<std::string, std::array<analysis::Vectors, 2>> groups;  // [label]: incorrect, correct
  std::vector<analysis::LabeledVector> labeled;
  for (const auto& s : corpus.steps) {
    const std::size_t idx = corpus.by_ref.at(s.trajectory_ref);
    const auto& v = corpus.inputs[idx].thoughts[static_cast<std::size_t>(s.step - 1)];
    const int pred = scores.prm[idx].he_prob[static_cast<std::size_t>(s.step - 1)] >= threshold ? 1 : 0;
    const std::string g = pred == s.he ? "prm+" : "prm-";
    groups["entire"][static_cast<std::size_t>(s.he)].push_back(v);
    groups[g][static_cast<std::size_t>(s.he)].push_back(v);
    labeled.push_back({s.trajectory_ref, s.step, v, s.he, g});
  }
  json geometry = json::array();
  std::string geo_csv = "group,label,n,isoscore,hoyer_mean,hoyer_std\n";
  for (const char* g : {"entire", "prm+", "prm-"}) {
    for (int label : {1, 0}) {
      const auto& v = groups[g][static_cast<std::size_t>(label)];
      json row;
      row["group"] = g;
      row["label"] = label == 1 ? "correct" : "incorrect";
      const json iso = isotropy_cell(v);
      const json hoy = hoyer_cell(v, mode);
      row["n"] = v.size();
      row["isoscore"] = iso["isoscore"];
      row["rank_deficient"] = iso["rank_deficient"];
      row["hoyer_mean"] = hoy["hoyer_mean"];
      row["hoyer_std"] = hoy["hoyer_std"];
      geometry.push_back(row);
      auto num = [&](const json& x) { return x.is_null() ? std::string() : f(x.get<double>()); };
      geo_csv += std::string(g) + "," + row["label"].get<std::string>() + "," + std::to_string(v.size()) + "," +
                 num(row["isoscore"]) + "," + num(row["hoyer_mean"]) + "," + num(row["hoyer_std"]) + "\n";
    }
  }

  // Trajectory-level groups: correct vs incorrect final answers.
  std::map<std::string, std::array<std::vector<analysis::Dynamics>, 2>> dyn;
  for (const auto& o : corpus.outcomes) {
    const std::size_t idx = corpus.by_ref.at(o.trajectory_ref);
    const auto d = analysis::dynamics(corpus.inputs[idx].thoughts);
    const auto label = static_cast<std::size_t>(o.r_out);
    dyn["entire"][label].push_back(d);
    if ((scores.orm[idx] >= threshold ? 1 : 0) == o.r_out) dyn["orm+"][label].push_back(d);
    if ((scores.prm[idx].he_prob.back() >= threshold ? 1 : 0) == o.r_out) dyn["prm+"][label].push_back(d);
  }
  json dynamics = json::array();
  std::string dyn_csv = "group,metric,n_correct,n_incorrect,mean_correct,std_correct,mean_incorrect,std_incorrect,p_value,cohens_d\n";
  const std::vector<std::pair<const char*, double analysis::Dynamics::*>> metrics{
      {"compactness", &analysis::Dynamics::compactness},
      {"curvature", &analysis::Dynamics::curvature},
      {"smoothness", &analysis::Dynamics::smoothness},
      {"straightness", &analysis::Dynamics::straightness}};
  for (const char* g : {"entire", "orm+", "prm+"}) {
    for (const auto& [metric, member] : metrics) {
      std::vector<double> correct, incorrect;
      for (const auto& d : dyn[g][1]) correct.push_back(d.*member);
      for (const auto& d : dyn[g][0]) incorrect.push_back(d.*member);
      json row = compare_cell(correct, incorrect);
      row["group"] = g;
      row["metric"] = metric;
      dynamics.push_back(row);
      auto num = [&](const char* k) { return row.contains(k) && !row[k].is_null() ? f(row[k].get<double>()) : std::string(); };
      dyn_csv += std::string(g) + "," + metric + "," + std::to_string(correct.size()) + "," +
                 std::to_string(incorrect.size()) + "," + num("mean_correct") + "," + num("std_correct") + "," +
                 num("mean_incorrect") + "," + num("std_incorrect") + "," + num("p_value") + "," + num("cohens_d") + "\n";
    }
  }
  run.write_csv("analysis/geometry.csv", geo_csv);
  run.write_json("analysis/geometry.json", geometry);
  run.write_csv("analysis/dynamics.csv", dyn_csv);
  run.write_json("analysis/dynamics.json", dynamics);
  run.write_jsonl("analysis/labeled_vectors.jsonl", analysis::export_labeled_vectors(labeled));
  run.finish();
}

void perturb(const Context& ctx) {
  StageRun run(ctx, "perturb");
  task::Vocabulary vocab;
  const auto problems = head(load_problems(run, "data/test.jsonl"), ctx.config.get_int("analysis.perturb_problems"));
  auto m = model::Transformer::load(run.in("model/model.bin").string());
  analysis::PerturbConfig pc;
  pc.ratios = ctx.config.get_doubles("analysis.ratios");
  pc.n = static_cast<std::size_t>(ctx.config.get_int("analysis.perturb_n"));
  const auto rows = analysis::perturb_sweep(m, vocab, problems, pc, root_rng(ctx, 13));
  std::string csv = "ratio,unique,pass_at_n,correct,majority_unchanged_percent\n";
  json data = json::array();
  for (const auto& r : rows) {
    csv += f(r.ratio) + "," + f(r.unique) + "," + f(r.pass_at_n) + "," + f(r.correct) + "," + f(r.majority_unchanged) + "\n";
    data.push_back({{"ratio", r.ratio},
                    {"unique", r.unique},
                    {"pass_at_n", r.pass_at_n},
                    {"correct", r.correct},
                    {"majority_unchanged_percent", r.majority_unchanged}});
  }
  run.write_csv("perturb/table.csv", csv);
  run.write_json("perturb/table.json", data);
  run.finish();
}

void report(const Context& ctx) {
  StageRun run(ctx, "report");
  const json audit = read_json_artifact(run.in("data/audit.json"));
  const json pass = read_json_artifact(run.in("samples/pass_at_n.json"));
  const json bon = read_json_artifact(run.in("rerank/bon.json"));
  const json prm_log = read_json_artifact(run.in("prm/train_log.json"));
  const json orm_log = read_json_artifact(run.in("orm/train_log.json"));
  const json cls = read_json_artifact(run.in("classify/report.json"));
  const json geo = read_json_artifact(run.in("analysis/geometry.json"));
  const json dyn = read_json_artifact(run.in("analysis/dynamics.json"));
  const json pert = read_json_artifact(run.in("perturb/table.json"));
  const json ann = read_json_artifact(run.in("annotations/summary.json"));
  const json train_log = read_json_artifact(run.in("model/train_log.json"));

  std::string md = "# Run report\n\nconfig hash `" + run.hash() + "`, seed " + std::to_string(ctx.config.seed()) + "\n\n";
  md += "## Data\n\n";
  md += markdown_table({"train", "test", "distinct train answers", "shared templates", "test answers seen in train"},
                       {{cell(audit["train_problems"]), cell(audit["test_problems"]), cell(audit["distinct_train_answers"]),
                         cell(audit["shared_templates"]), cell(audit["test_answers_seen_in_train"])}});
  md += "\nFinal curriculum loss: " + cell(train_log.back()["mean_loss"]) + "\n\n";

  md += "## Sampling scaling\n\nDeterministic latent accuracy: " + cell(pass["deterministic_accuracy"]) + " on " +
        cell(pass["deterministic_problems"]) + " test problems. Sampling uses the first " + cell(pass["problems"]) +
        ".\n\n";
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : pass["rows"]) {
    rows.push_back({cell(r["N"]), cell(r["pass_at_n"]), cell(r["unique"], 2), cell(r["correct"], 2)});
  }
  md += markdown_table({"N", "Pass@N", "unique answers", "correct answers"}, rows);

  md += "\n## Best-of-N reranking\n\n";
  rows.clear();
  for (const auto& r : bon) {
    rows.push_back({cell(r["N"]), cell(r["unique"], 2), cell(r["correct"], 2), cell(r["major_incorrect"], 2),
                    cell(r["pass_at_n"]), cell(r["confidence"]), cell(r["self_consistency"]), cell(r["prm-he-last"]),
                    cell(r["prm-se-last"]), cell(r["orm"])});
  }
  md += markdown_table({"N", "unique", "correct", "major incorrect", "Pass@N", "confidence", "self-consistency", "PRM-HE",
                        "PRM-SE", "ORM"},
                       rows);

  md += "\n## PRM score aggregation\n\n";
  rows.clear();
  for (const auto& r : bon) {
    std::vector<std::string> row{cell(r["N"])};
    for (const char* s : {"he", "se"})
      for (const char* a : {"last", "min", "max", "mean"}) row.push_back(cell(r[std::string("prm-") + s + "-" + a]));
    rows.push_back(row);
  }
  md += markdown_table({"N", "HE last", "HE min", "HE max", "HE mean", "SE last", "SE min", "SE max", "SE mean"}, rows);

  md += "\n## Reward model training\n\n";
  rows.clear();
  for (const auto& [name, log] : {std::pair<std::string, json>{"PRM", prm_log}, {"ORM", orm_log}}) {
    const auto& e = log["epochs"];
    const auto& h = log["holdout"];
    rows.push_back({name, cell(log["train_examples"]), cell(e.front()["mean_loss"]), cell(e.back()["mean_loss"]),
                    h.is_null() ? "n/a" : cell(h["report"]["accuracy"]), h.is_null() ? "n/a" : cell(h["majority_baseline"])});
  }
  md += markdown_table({"model", "train examples", "first epoch loss", "last epoch loss", "held-out accuracy",
                        "held-out majority baseline"},
                       rows);

  md += "\n## Monte-Carlo annotation\n\n";
  rows.clear();
  for (const char* split : {"train", "eval"}) {
    const auto& a = ann[split];
    rows.push_back({split, cell(a["problems"]), cell(a["m"]), cell(a["n_mc"]), cell(a["survivors_per_problem"], 2),
                    cell(a["steps"]), cell(a["positive_steps"]), cell(a["correct_trajectories"])});
  }
  md += markdown_table({"split", "problems", "M", "N_mc", "survivors per problem", "steps", "HE-positive steps",
                        "correct trajectories"},
                       rows);

  md += "\n## Classification on the evaluation annotations\n\n";
  rows.clear();
  for (const auto& r : cls) {
    const auto& rep = r["report"];
    rows.push_back({cell(r["model"]), cell(rep["accuracy"]), cell(rep["precision"]), cell(rep["recall"]), cell(rep["f1"]),
                    cell(rep["specificity"]), cell(r["majority_baseline"]),
                    cell(rep["confusion"]["tp"]) + "/" + cell(rep["confusion"]["fp"]) + "/" + cell(rep["confusion"]["tn"]) + "/" + cell(rep["confusion"]["fn"])});
  }
  md += markdown_table({"model", "accuracy", "precision", "recall", "F1", "specificity", "majority baseline",
                        "TP/FP/TN/FN"},
                       rows);

  md += "\n## Thought geometry\n\n";
  rows.clear();
  for (const auto& r : geo) {
    rows.push_back({cell(r["group"]), cell(r["label"]), cell(r["n"]), cell(r["isoscore"]),
                    r["hoyer_mean"].is_null() ? "n/a" : cell(r["hoyer_mean"]) + " ± " + cell(r["hoyer_std"])});
  }
  md += markdown_table({"group", "label", "n", "IsoScore*", "Hoyer"}, rows);

  md += "\n## Trajectory dynamics (correct vs incorrect)\n\n";
  rows.clear();
  for (const auto& r : dyn) {
    const bool ok = !r["p_value"].is_null();
    rows.push_back({cell(r["group"]), cell(r["metric"]),
                    ok ? cell(r["mean_correct"]) + " ± " + cell(r["std_correct"]) : "n/a",
                    ok ? cell(r["mean_incorrect"]) + " ± " + cell(r["std_incorrect"]) : "n/a", cell(r["p_value"]),
                    cell(r["cohens_d"])});
  }
  md += markdown_table({"group", "metric", "correct", "incorrect", "p", "Cohen's d"}, rows);

  md += "\n## Noise perturbation\n\n";
  rows.clear();
  for (const auto& r : pert) {
    rows.push_back({cell(r["ratio"], 1), cell(r["unique"], 2), cell(r["pass_at_n"]), cell(r["correct"], 2),
                    cell(r["majority_unchanged_percent"], 1)});
  }
  md += markdown_table({"ratio", "unique", "Pass@N", "correct", "% majority unchanged"}, rows);

  json all;
  all["audit"] = audit;
  all["sampling"] = pass;
  all["bon"] = bon;
  all["prm_training"] = prm_log;
  all["orm_training"] = orm_log;
  all["annotation"] = ann;
  all["classification"] = cls;
  all["geometry"] = geo;
  all["dynamics"] = dyn;
  all["perturbation"] = pert;
  run.write("report/report.md", md);
  run.write_json("report/report.json", all);
  run.finish();
}

void run_stage(const std::string& name, const Context& ctx) {
  static const std::map<std::string, void (*)(const Context&)> table{
      {"gen-data", gen_data},   {"train-model", train_model}, {"sample", sample},
      {"annotate", annotate},   {"train-prm", train_prm},     {"train-orm", train_orm},
      {"rerank", rerank},       {"classify-eval", classify_eval}, {"analyze", analyze},
      {"perturb", perturb},     {"report", report}};
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown subcommand '" + name + "'");
  it->second(ctx);
}

void run_all(const Context& ctx) {
  for (const auto& s : stages()) run_stage(s.name, ctx);
}

}  // namespace latentscale::pipeline
