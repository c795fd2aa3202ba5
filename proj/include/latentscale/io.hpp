#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace latentscale::io {

/// Raised when a required artifact is missing or unreadable.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path);
/// Writes atomically enough for our purposes: to path.tmp, then rename.
void write_text(const std::string& path, std::string_view content);
bool exists(const std::string& path);

std::vector<nlohmann::json> parse_jsonl(std::string_view text);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

/// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace latentscale::io
