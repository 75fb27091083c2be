#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xmodal {

enum class ErrorKind {
    InvalidInput,
    InvalidConfig,
    ParseError,
    DuplicateId,
    UnknownLabel,
    BadMagic,
    VersionMismatch,
    TruncatedPayload,
    CorruptTensor,
    MissingTeacherEmbedding,
    Io,
    Refuse,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

    // Validation errors are problems with the content of otherwise readable
    // inputs; the CLI maps them to exit code 2 and everything else to 1.
    bool is_validation() const noexcept;

private:
    ErrorKind kind_;
};

#define XMODAL_DEFINE_ERROR(Name)                                         \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& message)                         \
            : Error(ErrorKind::Name, message) {}                          \
    };

XMODAL_DEFINE_ERROR(InvalidInput)
XMODAL_DEFINE_ERROR(InvalidConfig)
XMODAL_DEFINE_ERROR(DuplicateId)
XMODAL_DEFINE_ERROR(UnknownLabel)
XMODAL_DEFINE_ERROR(BadMagic)
XMODAL_DEFINE_ERROR(VersionMismatch)
XMODAL_DEFINE_ERROR(TruncatedPayload)
XMODAL_DEFINE_ERROR(CorruptTensor)
XMODAL_DEFINE_ERROR(Refuse)

#undef XMODAL_DEFINE_ERROR

class MissingTeacherEmbedding : public Error {
public:
    explicit MissingTeacherEmbedding(std::string clip_id);
    const std::string& clip_id() const noexcept { return clip_id_; }

private:
    std::string clip_id_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error(ErrorKind::Io, message) {}
};

/// Parse failure tied to a 1-based line number (0 when the file has no lines).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& reason);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace xmodal
