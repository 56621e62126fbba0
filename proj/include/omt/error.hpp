#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace omt {

// One code space for the whole engine so callers (CLI exit codes, service
// error payloads) can map failures without knowing which module threw.
enum class Errc {
  // container format
  UnsupportedMagic,
  UnsupportedVersion,
  TruncatedFile,
  MalformedMetadata,
  DuplicateTensorName,
  NotFound,
  TypeMismatch,
  GeometryMismatch,
  InvalidSpec,
  // kernels
  UnsupportedQuantType,
  NonFiniteInput,
  // tokenizer
  MissingTokenizerMetadata,
  VocabSizeMismatch,
  InvalidTokenId,
  // inference
  UnsupportedArchitecture,
  MissingTensor,
  ShapeMismatch,
  LengthMismatch,
  OddHeadDim,
  ContextOverflow,
  NonFiniteActivation,
  // pipeline / evaluation
  EmptyInput,
  EmptyCorpus,
  ArchitectureMismatch,
  InvalidArgument,
  IoError,
  BusyTimeout,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace omt
