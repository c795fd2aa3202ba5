#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentscale/io.hpp"
#include "latentscale/pipeline.hpp"
#include "latentscale/tensor.hpp"

using namespace latentscale;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "runs/default";
  bool force = false;
};

pipeline::Context make_context(const Options& o) {
  pipeline::RunConfig cfg = o.config_path.empty() ? pipeline::RunConfig() : pipeline::RunConfig::load(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  pipeline::Context ctx;
  ctx.config = cfg;
  ctx.out_dir = o.out_dir;
  ctx.force = o.force;
  ctx.log = [](const std::string& msg) { std::cerr << msg << std::endl; };
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-reasoning inference-time scaling pipeline"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "key=value config file");
    sub->add_option("-s,--set", opt.overrides, "override one key (key=value), repeatable");
    sub->add_option("-o,--out", opt.out_dir, "artifact directory")->capture_default_str();
    sub->add_flag("--force", opt.force, "accept upstream artifacts produced under a different config");
  };
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& s : pipeline::stages()) {
    std::string help = "run the " + s.name + " stage";
    if (!s.depends_on.empty()) {
      help += " (needs";
      for (const auto& d : s.depends_on) help += " " + d;
      help += ")";
    }
    auto* sub = app.add_subcommand(s.name, help);
    add_common(sub);
    stage_cmds.emplace_back(sub, s.name);
  }
  auto* all = app.add_subcommand("all", "run every stage in order");
  add_common(all);
  auto* show = app.add_subcommand("print-config", "print the effective configuration and its hash");
  add_common(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto ctx = make_context(opt);
    if (show->parsed()) {
      std::cout << ctx.config.text() << "# config_hash=" << ctx.config.hash() << "\n";
      return 0;
    }
    if (all->parsed()) {
      pipeline::run_all(ctx);
      return 0;
    }
    for (const auto& [sub, name] : stage_cmds) {
      if (sub->parsed()) pipeline::run_stage(name, ctx);
    }
    return 0;
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pipeline::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const io::MissingArtifact& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const num::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
