#include "omt/error.hpp"

namespace omt {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnsupportedMagic: return "UnsupportedMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::MalformedMetadata: return "MalformedMetadata";
    case Errc::DuplicateTensorName: return "DuplicateTensorName";
    case Errc::NotFound: return "NotFound";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::GeometryMismatch: return "GeometryMismatch";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::UnsupportedQuantType: return "UnsupportedQuantType";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::MissingTokenizerMetadata: return "MissingTokenizerMetadata";
    case Errc::VocabSizeMismatch: return "VocabSizeMismatch";
    case Errc::InvalidTokenId: return "InvalidTokenId";
    case Errc::UnsupportedArchitecture: return "UnsupportedArchitecture";
    case Errc::MissingTensor: return "MissingTensor";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::OddHeadDim: return "OddHeadDim";
    case Errc::ContextOverflow: return "ContextOverflow";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::ArchitectureMismatch: return "ArchitectureMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    case Errc::BusyTimeout: return "BusyTimeout";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace omt
