#include "xman/error.hpp"

namespace xman {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingConfigDir: return "MissingConfigDir";
    case Errc::MalformedConfigFile: return "MalformedConfigFile";
    case Errc::NonScalarLeaf: return "NonScalarLeaf";
    case Errc::BadOverrideSyntax: return "BadOverrideSyntax";
    case Errc::EmptyValueList: return "EmptyValueList";
    case Errc::DuplicateSweepValue: return "DuplicateSweepValue";
    case Errc::LockTimeout: return "LockTimeout";
    case Errc::IoFailure: return "IoFailure";
    case Errc::AlreadyInitialized: return "AlreadyInitialized";
    case Errc::NotRunning: return "NotRunning";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::ArtifactExists: return "ArtifactExists";
    case Errc::InvalidName: return "InvalidName";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::UnknownRun: return "UnknownRun";
    case Errc::NotARepository: return "NotARepository";
    case Errc::VcsToolMissing: return "VcsToolMissing";
    case Errc::DirtyRepository: return "DirtyRepository";
    case Errc::CommitFailed: return "CommitFailed";
    case Errc::UnknownCommit: return "UnknownCommit";
    case Errc::SnapshotMissing: return "SnapshotMissing";
    case Errc::SpawnFailure: return "SpawnFailure";
    case Errc::InvalidSettings: return "InvalidSettings";
    case Errc::NoDirectives: return "NoDirectives";
    case Errc::MixedSchedulers: return "MixedSchedulers";
    case Errc::NoPayload: return "NoPayload";
    case Errc::MultiplePayloads: return "MultiplePayloads";
    case Errc::SubmitCommandFailed: return "SubmitCommandFailed";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::MissingLogsRoot: return "MissingLogsRoot";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnknownOperator: return "UnknownOperator";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::MissingMetric: return "MissingMetric";
    case Errc::CorruptMetricLine: return "CorruptMetricLine";
    case Errc::NonMetadataGroupKey: return "NonMetadataGroupKey";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::MissingColumnInGroup: return "MissingColumnInGroup";
    case Errc::EmptyFrame: return "EmptyFrame";
  }
  return "UnknownError";
}

}  // namespace xman
