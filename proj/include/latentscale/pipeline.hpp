#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentscale/model.hpp"
#include "latentscale/reward.hpp"
#include "latentscale/task.hpp"

namespace latentscale::pipeline {

/// Bad or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or inconsistent upstream artifact (exit code 3).
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value configuration. Every key has a default; the effective
/// values are what gets hashed and echoed into manifests.
class RunConfig {
 public:
  RunConfig();

  /// Overlays `key=value` lines ('#' starts a comment) on the defaults.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Sorted key=value lines.
  std::string text() const;
  std::string hash() const;
  /// Throws ConfigError on the first invalid value.
  void validate() const;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
  task::TaskConfig task() const;
  model::ModelConfig model(int vocab_size) const;
  model::CurriculumConfig curriculum() const;
  reward::RmTrainConfig rm_training() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct Context {
  RunConfig config;
  std::filesystem::path out_dir;
  bool force = false;  // accept upstream manifests produced under another config hash
  /// Progress and timing messages; never written into artifacts.
  std::function<void(const std::string&)> log;
};

struct StageInfo {
  std::string name;
  std::vector<std::string> depends_on;
};

/// Subcommands in execution order with their upstream dependencies.
const std::vector<StageInfo>& stages();

void gen_data(const Context& ctx);
void train_model(const Context& ctx);
void sample(const Context& ctx);
void annotate(const Context& ctx);
void train_prm(const Context& ctx);
void train_orm(const Context& ctx);
void rerank(const Context& ctx);
void classify_eval(const Context& ctx);
void analyze(const Context& ctx);
void perturb(const Context& ctx);
void report(const Context& ctx);

/// Runs one subcommand by name; throws ConfigError on unknown names.
void run_stage(const std::string& name, const Context& ctx);
/// Every subcommand in order.
void run_all(const Context& ctx);

/// Strips the config-hash header line written in front of JSONL artifacts.
std::string read_jsonl_artifact(const std::filesystem::path& path);
/// Reads a JSON artifact and returns its "data" member.
nlohmann::ordered_json read_json_artifact(const std::filesystem::path& path);

}  // namespace latentscale::pipeline
