#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stairpool {

enum class Errc {
  NonDivisibleShape,
  KernelStrideMismatch,
  ChannelMismatch,
  ShapeUnderflow,
  ShapeMismatch,
  NotScalar,
  TapeMismatch,
  UnsupportedNdim,
  ProductMismatch,
  NotNarrow,
  NoActivePaths,
  InvalidConfig,
  NotStairStep,
  BadPathIndex,
  UnknownPathLabel,
  EmptyTensor,
  MissingGrad,
  NonSquare,
  BadSize,
  BadMagic,
  VersionUnsupported,
  CrcMismatch,
  MissingParameter,
  NoStairSteps,
  Io,
};

std::string_view errc_name(Errc code);

// Every failure raised by the library carries one of the codes above so that
// callers (tests, the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace stairpool
