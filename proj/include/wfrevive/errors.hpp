#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wfr {

// Every failure the engine reports to callers carries one of these codes.
enum class Errc {
  MalformedXml,
  UnsupportedFormat,
  DanglingLink,
  CyclicWorkflow,
  SchemaViolation,
  UnconfirmableProbe,
  MalformedRecord,
  UnsubstitutedEndpoint,
  ProviderUnavailable,
  BodyRejected,
  SandboxSetupFailed,
  UnknownQuestion,
  AnswerShapeMismatch,
  EmissionImpossible,
  IncompleteSession,
  Blocked,
  TerminalFailure,
  BindFailure,
  NotFound,
  InvalidArgument,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message, std::vector<std::string> subjects = {})
      : std::runtime_error(std::move(message)), code_(code), subjects_(std::move(subjects)) {}

  Errc code() const noexcept { return code_; }

  // Names the error is about: offending processor names, step ids, a JSON
  // path, a line number, or question ids, depending on the code.
  const std::vector<std::string>& subjects() const noexcept { return subjects_; }

 private:
  Errc code_;
  std::vector<std::string> subjects_;
};

}  // namespace wfr
