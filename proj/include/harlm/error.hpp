#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harlm {

enum class ErrorKind {
  NoValidJoints,
  Parse,
  EmptyFrame,
  EmptyVideo,
  Manifest,
  Domain,
  EmptyLabelSet,
  UnknownLabelWord,
  MalformedSequence,
  Shape,
  TokenOutOfRange,
  NoTargets,
  NonFiniteGradient,
  NonFiniteUpdate,
  Io,
  VersionMismatch,
  CorruptChecksum,
  LengthMismatch,
  EmptyEvaluation,
  UnknownLabel,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries one of the kinds above so
// callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace harlm
