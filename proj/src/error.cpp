#include "harlm/error.hpp"

#include <cmath>
#include <numbers>

#include "harlm/random.hpp"

namespace harlm {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NoValidJoints: return "NoValidJoints";
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::EmptyFrame: return "EmptyFrame";
    case ErrorKind::EmptyVideo: return "EmptyVideo";
    case ErrorKind::Manifest: return "ManifestError";
    case ErrorKind::Domain: return "DomainError";
    case ErrorKind::EmptyLabelSet: return "EmptyLabelSet";
    case ErrorKind::UnknownLabelWord: return "UnknownLabelWord";
    case ErrorKind::MalformedSequence: return "MalformedSequence";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorKind::NoTargets: return "NoTargets";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptChecksum: return "CorruptChecksum";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace harlm
