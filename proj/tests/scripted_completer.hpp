#pragma once

#include <string>
#include <utility>
#include <vector>

#include "latentscale/annotator.hpp"

namespace latentscale::testing {

// Replays a fixed answer script in call order and records the prefix lengths
// and rng fingerprints it was called with.
struct ScriptedCompleter {
  explicit ScriptedCompleter(std::vector<std::string> answers) : script(std::move(answers)) {}

  std::vector<std::string> script;
  std::size_t next = 0;
  std::vector<std::size_t> prefix_lengths;
  std::vector<std::string> fingerprints;

  annotator::Completer fn() {
    return [this](const task::Problem&, std::span<const std::vector<double>> prefix, num::RngStream rng) {
      prefix_lengths.push_back(prefix.size());
      fingerprints.push_back(rng.fingerprint());
      return script.at(next++);
    };
  }
};

}  // namespace latentscale::testing
