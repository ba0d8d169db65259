#include "dann/error.hpp"
#include "dannctl/grid.hpp"
#include "dannctl/manifest.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

TEST(Grid, NumbersAndLogRanges) {
  EXPECT_EQ(dannctl::parse_grid("0"), std::vector<double>{0.0});
  EXPECT_EQ(dannctl::parse_grid("0, 0.5,2"), (std::vector<double>{0.0, 0.5, 2.0}));
  const auto g = dannctl::parse_grid("0,0.1:1000:5");
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[0], 0.0);
  const double expected[] = {0.1, 1.0, 10.0, 100.0, 1000.0};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(g[i + 1], expected[i], 1e-12 * expected[i]);
  EXPECT_EQ(g.back(), 1000.0);
}

TEST(Grid, RejectsMalformedSpecs) {
  for (const char* bad : {"", "a", "1,,2", "0:10:3", "1:10", "1:10:0", "-1", "1:10:x"}) {
    EXPECT_THROW(dannctl::parse_grid(bad), dann::ConfigError) << bad;
  }
}

TEST(Manifest, GitBlobHash) {
  EXPECT_EQ(dannctl::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(dannctl::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const auto path = std::filesystem::temp_directory_path() / "dannctl_hash_probe.txt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "hello\n";
  }
  EXPECT_EQ(dannctl::git_file_sha1(path), "ce013625030ba8dba906f756967f9e9ca394464a");
  std::filesystem::remove(path);
}

TEST(Manifest, RecordsInputsAndOutputs) {
  const auto dir = std::filesystem::temp_directory_path() / "dannctl_manifest_probe";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "in.txt", std::ios::binary);
    out << "hello\n";
  }
  dannctl::Manifest m("train", {"dannctl", "train"}, "1.2.3");
  m.set_seed(42);
  m.set_config("train", {{"batch_size", 8}});
  m.add_input(dir / "in.txt");
  m.note("status", "ok");
  m.write(dir);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("command"), "train");
  EXPECT_EQ(j.at("seed"), 42);
  EXPECT_EQ(j.at("version"), "1.2.3");
  EXPECT_EQ(j.at("inputs").at(0).at("sha1"), "ce013625030ba8dba906f756967f9e9ca394464a");
  std::filesystem::remove_all(dir);
}
