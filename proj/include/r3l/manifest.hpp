#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace r3l {

// Record of one CLI run: what ran, what it produced, and the hash of every
// produced file. Written atomically at run end.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> artifacts;  // path, hash
  double wall_seconds = 0;

  void add_artifact(const std::string& path_in_out_dir);
  void write(const std::string& path) const;
};

}  // namespace r3l
