#pragma once

#include <string>
#include <utility>
#include <vector>

#include "latentscale/autodiff.hpp"

namespace latentscale::io {

/// Binary parameter file: magic, format version, a kind tag, an embedded
/// config text and a list of named f64 blocks with their shapes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string kind;
  std::string config_text;
  std::vector<std::pair<std::string, num::Tensor>> blocks;

  const num::Tensor& block(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const std::string& kind, const std::string& config_text,
                      const num::ParameterSet& params);
Checkpoint read_checkpoint(const std::string& path);

/// Copies every block of `ckpt` into the same-named parameter; shapes and
/// names must match exactly.
void load_parameters(const Checkpoint& ckpt, num::ParameterSet& params);

}  // namespace latentscale::io
