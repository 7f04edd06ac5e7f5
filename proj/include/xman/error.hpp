#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xman {

enum class Errc {
  // config
  MissingConfigDir,
  MalformedConfigFile,
  NonScalarLeaf,
  BadOverrideSyntax,
  EmptyValueList,
  DuplicateSweepValue,
  // runstore
  LockTimeout,
  IoFailure,
  AlreadyInitialized,
  NotRunning,
  NonFiniteValue,
  ArtifactExists,
  InvalidName,
  IllegalTransition,
  UnknownRun,
  // versioning
  NotARepository,
  VcsToolMissing,
  DirtyRepository,
  CommitFailed,
  UnknownCommit,
  SnapshotMissing,
  // launcher
  SpawnFailure,
  InvalidSettings,
  // scheduler
  NoDirectives,
  MixedSchedulers,
  NoPayload,
  MultiplePayloads,
  SubmitCommandFailed,
  BackendUnavailable,
  // reader
  MissingLogsRoot,
  SyntaxError,
  UnknownOperator,
  UnknownKey,
  TypeMismatch,
  MissingMetric,
  CorruptMetricLine,
  NonMetadataGroupKey,
  LengthMismatch,
  MissingColumnInGroup,
  EmptyFrame,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace xman
