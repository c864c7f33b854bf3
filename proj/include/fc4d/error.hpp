#pragma once

#include <stdexcept>
#include <string>

namespace fc4d {

enum class ErrorKind {
    kInvalidParameter,
    kDegenerateCovariance,
    kInvalidCamera,
    kBehindCamera,
    kUsage,
    kCorruptCheckpoint,
    kUnsupportedVersion,
    kParse,
    kIo,
    kRenderAbort,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kInvalidParameter: return "invalid parameter";
        case ErrorKind::kDegenerateCovariance: return "degenerate covariance";
        case ErrorKind::kInvalidCamera: return "invalid camera";
        case ErrorKind::kBehindCamera: return "behind camera";
        case ErrorKind::kUsage: return "usage error";
        case ErrorKind::kCorruptCheckpoint: return "corrupt checkpoint";
        case ErrorKind::kUnsupportedVersion: return "unsupported version";
        case ErrorKind::kParse: return "parse error";
        case ErrorKind::kIo: return "I/O error";
        case ErrorKind::kRenderAbort: return "render aborted";
    }
    return "error";
}

/// Every failure raised by the library carries a kind so that callers (the CLI
/// in particular) can map it onto an exit code without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace fc4d
