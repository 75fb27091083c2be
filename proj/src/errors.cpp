#include "xmodal/errors.hpp"

namespace xmodal {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::UnknownLabel: return "UnknownLabel";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::VersionMismatch: return "VersionMismatch";
        case ErrorKind::TruncatedPayload: return "TruncatedPayload";
        case ErrorKind::CorruptTensor: return "CorruptTensor";
        case ErrorKind::MissingTeacherEmbedding: return "MissingTeacherEmbedding";
        case ErrorKind::Io: return "IoError";
        case ErrorKind::Refuse: return "Refuse";
    }
    return "Error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

bool Error::is_validation() const noexcept {
    switch (kind_) {
        case ErrorKind::InvalidInput:
        case ErrorKind::InvalidConfig:
        case ErrorKind::ParseError:
        case ErrorKind::DuplicateId:
        case ErrorKind::UnknownLabel:
        case ErrorKind::MissingTeacherEmbedding:
        case ErrorKind::Refuse:
            return true;
        default:
            return false;
    }
}

MissingTeacherEmbedding::MissingTeacherEmbedding(std::string clip_id)
    : Error(ErrorKind::MissingTeacherEmbedding, "no teacher embedding for clip '" + clip_id + "'"),
      clip_id_(std::move(clip_id)) {}

ParseError::ParseError(std::size_t line, const std::string& reason)
    : Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + reason), line_(line) {}

}  // namespace xmodal
