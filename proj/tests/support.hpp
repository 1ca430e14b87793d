#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "wfrevive/digest.hpp"

namespace wfr::test {

inline std::filesystem::path data_path(const std::string& rel) { return std::filesystem::path(WFR_TEST_DATA) / rel; }

inline std::string fixture(const std::string& rel) { return read_file(data_path("fixtures/" + rel)); }

inline std::string workflow_fixture(const std::string& name) { return fixture("workflows/" + name); }

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "wfr") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace wfr::test
