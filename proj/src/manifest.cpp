#include "r3l/manifest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/relrep.hpp"

namespace r3l {

void RunManifest::add_artifact(const std::string& path_in_out_dir) {
  std::string full =
      (std::filesystem::path(out_dir) / path_in_out_dir).string();
  artifacts.emplace_back(path_in_out_dir, hex64(file_hash(full)));
}

void RunManifest::write(const std::string& path) const {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail("cannot open '", tmp, "' for writing");
    out << "command=" << command << "\n";
    out << "config=" << config_path << "\n";
    out << "out=" << out_dir << "\n";
    out << "seed=" << seed << "\n";
    for (const auto& [p, h] : artifacts)
      out << "artifact=" << p << " fnv1a64=" << h << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "wall_seconds=%.3f\n", wall_seconds);
    out << buf;
    if (!out) fail("short write to '", tmp, "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace r3l
