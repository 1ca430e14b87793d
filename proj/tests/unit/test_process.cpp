#include "catch_amalgamated.hpp"

#include "support.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"

using namespace wfr;

namespace {

ProcessSpec python(const std::string& code) {
  ProcessSpec s;
  s.argv = {python_executable(), "-c", code};
  s.env = environment_subset({"PATH"});
  return s;
}

}  // namespace

TEST_CASE("run_process captures exit status and both streams") {
  auto r = run_process(python("import sys; print('out'); print('err', file=sys.stderr); sys.exit(3)"));
  CHECK(r.exit_code == 3);
  CHECK(r.out == "out\n");
  CHECK(r.err == "err\n");
  CHECK_FALSE(r.timed_out);
}

TEST_CASE("run_process feeds stdin and uses the given cwd and env") {
  test::TempDir dir;
  auto spec = python("import os, sys; print(sys.stdin.read().upper(), os.getcwd(), os.environ.get('A'), os.environ.get('HOME'))");
  spec.stdin_data = "abc";
  spec.cwd = dir.path();
  spec.env["A"] = "1";
  auto r = run_process(spec);
  CHECK(r.exit_code == 0);
  CHECK(r.out == "ABC " + std::filesystem::canonical(dir.path()).string() + " 1 None\n");
}

TEST_CASE("run_process kills the process group on timeout") {
  auto spec = python("import subprocess, sys, time; subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(30)']); time.sleep(30)");
  spec.timeout = std::chrono::milliseconds(400);
  auto r = run_process(spec);
  CHECK(r.timed_out);
  CHECK(r.exit_code == -1);
  CHECK(r.wall_ms < 5000);
}

TEST_CASE("run_process handles large output without deadlock") {
  auto r = run_process(python("import sys; sys.stdout.write('x' * 1000000); sys.stderr.write('y' * 500000)"));
  CHECK(r.out.size() == 1000000);
  CHECK(r.err.size() == 500000);
}

TEST_CASE("run_process reports a missing executable") {
  ProcessSpec s;
  s.argv = {"/nonexistent/interpreter"};
  try {
    run_process(s);
    FAIL("expected SandboxSetupFailed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SandboxSetupFailed);
  }
}

TEST_CASE("python_syntax_error") {
  CHECK_FALSE(python_syntax_error("x = 1\nprint(x)\n"));
  auto bad = python_syntax_error("def f(:\n  pass\n");
  REQUIRE(bad);
  CHECK(bad->rfind("line 1", 0) == 0);
  auto indented = python_syntax_error("x = 1\n  y = 2\n");
  REQUIRE(indented);
  CHECK(indented->rfind("line 2", 0) == 0);
}
