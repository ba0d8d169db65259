#pragma once

// Run manifest written next to every artifact-producing command's outputs.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dannctl {

// Hash git assigns to a blob with this content: sha1("blob <size>\0" + content).
std::string git_blob_sha1(std::string_view content);
std::string git_file_sha1(const std::filesystem::path& file);

class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv, std::string version);

  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(const std::string& name, nlohmann::json config) { config_[name] = std::move(config); }
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void note(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  nlohmann::json to_json() const;
  // Writes <dir>/manifest.json.
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string version_;
  std::uint64_t seed_ = 0;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json extra_ = nlohmann::json::object();
  std::chrono::system_clock::time_point started_;
  std::chrono::steady_clock::time_point clock_;
};

}  // namespace dannctl
