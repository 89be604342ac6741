#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vgdz {

enum class Errc {
  InvalidBox,
  InvalidImage,
  ClipCollapse,
  DegenerateRegion,
  InvalidScheduleParams,
  ShapeMismatch,
  TimestepOutOfRange,
  BackendUnavailable,
  CanvasMismatch,
  EmptyExpression,
  NoProposals,
  MissingViews,
  SchemaError,
  MissingImage,
  MissingDetections,
  UnknownSplit,
  SubsetTooLarge,
  InvalidConfig,
  IOError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidBox: return "InvalidBox";
    case Errc::InvalidImage: return "InvalidImage";
    case Errc::ClipCollapse: return "ClipCollapse";
    case Errc::DegenerateRegion: return "DegenerateRegion";
    case Errc::InvalidScheduleParams: return "InvalidScheduleParams";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::TimestepOutOfRange: return "TimestepOutOfRange";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::CanvasMismatch: return "CanvasMismatch";
    case Errc::EmptyExpression: return "EmptyExpression";
    case Errc::NoProposals: return "NoProposals";
    case Errc::MissingViews: return "MissingViews";
    case Errc::SchemaError: return "SchemaError";
    case Errc::MissingImage: return "MissingImage";
    case Errc::MissingDetections: return "MissingDetections";
    case Errc::UnknownSplit: return "UnknownSplit";
    case Errc::SubsetTooLarge: return "SubsetTooLarge";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IOError: return "IOError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message starts with the code name so logs and results files stay greppable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace vgdz
