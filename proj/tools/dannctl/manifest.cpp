#include "manifest.hpp"

#include "dann/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dannctl {

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1: digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string git_file_sha1(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw dann::ConfigError("cannot read '" + file.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return git_blob_sha1(buf.str());
}

Manifest::Manifest(std::string command, std::vector<std::string> argv, std::string version)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      version_(std::move(version)),
      started_(std::chrono::system_clock::now()),
      clock_(std::chrono::steady_clock::now()) {}

void Manifest::add_input(const std::filesystem::path& path) {
  inputs_.push_back({{"path", path.string()}, {"sha1", git_file_sha1(path)}});
}

void Manifest::add_output(const std::filesystem::path& path) {
  outputs_.push_back({{"path", path.filename().string()}, {"sha1", git_file_sha1(path)}});
}

nlohmann::json Manifest::to_json() const {
  const std::time_t t = std::chrono::system_clock::to_time_t(started_);
  std::tm utc{};
  gmtime_r(&t, &utc);
  std::ostringstream when;
  when << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_).count();
  nlohmann::json j = {{"tool", "dannctl"},
                      {"version", version_},
                      {"command", command_},
                      {"argv", argv_},
                      {"seed", seed_},
                      {"config", config_},
                      {"inputs", inputs_},
                      {"outputs", outputs_},
                      {"started_utc", when.str()},
                      {"wall_seconds", seconds}};
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  return j;
}

void Manifest::write(const std::filesystem::path& dir) const {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw dann::ConfigError("cannot write manifest in '" + dir.string() + "'");
  out << to_json().dump(2) << '\n';
}

}  // namespace dannctl
