// Per-command manifests with git-style content checksums.

#ifndef DOPT_TOOLS_MANIFEST_H_
#define DOPT_TOOLS_MANIFEST_H_

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dopt::cli {

namespace fs = std::filesystem;

// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string GitBlobSha1(std::string_view content);
std::string GitBlobSha1File(const fs::path& path);
std::string Sha1Hex(std::string_view data);

class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv,
           const nlohmann::json& config, fs::path output_dir);

  void Input(const fs::path& path);
  void Output(const fs::path& path);
  // Writes <output_dir>/manifests/<name>.json.
  void Write(const std::string& name) const;

 private:
  nlohmann::json Entry(const fs::path& path) const;

  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json config_;
  fs::path output_dir_;
  std::vector<fs::path> inputs_, outputs_;
};

}  // namespace dopt::cli

#endif  // DOPT_TOOLS_MANIFEST_H_
