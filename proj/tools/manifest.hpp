#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace matekit::cli {

std::string sha256_hex(const std::string& bytes);
std::string read_file(const std::string& path);

// Reproducibility record embedded in every JSON output. Wall-clock timings are
// kept out of it (they go to stderr with --verbose) so identical runs produce
// identical bytes.
struct RunManifest {
  std::string command;
  std::string config_sha256;
  std::optional<std::string> input_sha256;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> assumptions;

  nlohmann::json to_json() const;
};

}  // namespace matekit::cli
