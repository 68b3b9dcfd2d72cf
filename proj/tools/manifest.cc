#include "manifest.h"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <stdexcept>

#include "dopt/common.h"

namespace dopt::cli {

std::string Sha1Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string GitBlobSha1(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return Sha1Hex(blob);
}

std::string GitBlobSha1File(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  const std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  return GitBlobSha1(content);
}

Manifest::Manifest(std::string command, std::vector<std::string> argv,
                   const nlohmann::json& config, fs::path output_dir)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      config_(config),
      output_dir_(std::move(output_dir)) {}

void Manifest::Input(const fs::path& path) { inputs_.push_back(path); }
void Manifest::Output(const fs::path& path) { outputs_.push_back(path); }

nlohmann::json Manifest::Entry(const fs::path& path) const {
  // Paths inside the output directory are recorded relative to it.
  const auto rel = path.lexically_relative(output_dir_);
  const bool inside = !rel.empty() && *rel.begin() != "..";
  return {{"path", inside ? rel.generic_string() : path.generic_string()},
          {"sha1", GitBlobSha1File(path)},
          {"bytes", fs::file_size(path)}};
}

void Manifest::Write(const std::string& name) const {
  nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
  for (const auto& p : inputs_) in.push_back(Entry(p));
  for (const auto& p : outputs_) out.push_back(Entry(p));
  const nlohmann::json m = {
      {"schema_version", 1},
      {"command", command_},
      {"argv", argv_},
      {"profile", config_.value("profile", "")},
      {"seed", config_.value("seed", 0)},
      {"config_hash", Sha1Hex(config_.dump())},
      {"config", config_},
      {"inputs", in},
      {"outputs", out},
  };
  const fs::path dir = output_dir_ / "manifests";
  fs::create_directories(dir);
  std::ofstream f(dir / (name + ".json"));
  f << m.dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write manifest " + name);
}

}  // namespace dopt::cli
