#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wfr {

struct ProcessSpec {
  std::vector<std::string> argv;  // argv[0] must be an absolute path
  std::filesystem::path cwd;      // empty: inherit
  std::map<std::string, std::string> env;  // the complete environment
  std::string stdin_data;
  std::chrono::milliseconds timeout{600000};
};

struct ProcessResult {
  int exit_code = -1;  // -1 when killed by a signal
  int signal = 0;
  bool timed_out = false;
  std::string out;
  std::string err;
  std::int64_t wall_ms = 0;
};

/// Runs a child in its own process group; on timeout the whole group is
/// killed. Throws Error(SandboxSetupFailed) when the child cannot be started.
ProcessResult run_process(const ProcessSpec& spec);

// Interpreter used for pivot scripts: $WFR_PYTHON, else the one found at
// build time.
std::string python_executable();

// nullopt when `source` parses as Python; otherwise the parser's message.
std::optional<std::string> python_syntax_error(std::string_view source);

// Selected variables of the current environment (absent ones skipped).
std::map<std::string, std::string> environment_subset(const std::vector<std::string>& names);

}  // namespace wfr
