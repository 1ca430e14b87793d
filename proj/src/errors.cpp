#include "wfrevive/errors.hpp"

namespace wfr {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedXml: return "MalformedXml";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::DanglingLink: return "DanglingLink";
    case Errc::CyclicWorkflow: return "CyclicWorkflow";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::UnconfirmableProbe: return "UnconfirmableProbe";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::UnsubstitutedEndpoint: return "UnsubstitutedEndpoint";
    case Errc::ProviderUnavailable: return "ProviderUnavailable";
    case Errc::BodyRejected: return "BodyRejected";
    case Errc::SandboxSetupFailed: return "SandboxSetupFailed";
    case Errc::UnknownQuestion: return "UnknownQuestion";
    case Errc::AnswerShapeMismatch: return "AnswerShapeMismatch";
    case Errc::EmissionImpossible: return "EmissionImpossible";
    case Errc::IncompleteSession: return "IncompleteSession";
    case Errc::Blocked: return "Blocked";
    case Errc::TerminalFailure: return "TerminalFailure";
    case Errc::BindFailure: return "BindFailure";
    case Errc::NotFound: return "NotFound";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace wfr
