#pragma once

#include <stdexcept>
#include <string>

namespace risamc {

// Exit code classes for the CLI: 0 success, 1 usage, 2 data/format,
// 3 numerical failure.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    data = 2,
    numeric = 3,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ExitCode exit_code() const { return code_; }

private:
    ExitCode code_;
};

struct IndivisibleBitCount : Error {
    explicit IndivisibleBitCount(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct EmptyInput : Error {
    explicit EmptyInput(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct InvalidSplit : Error {
    explicit InvalidSplit(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct IndexOutOfRange : Error {
    explicit IndexOutOfRange(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct NonFiniteLoss : Error {
    NonFiniteLoss(const std::string& msg, long batch_index)
        : Error(ExitCode::numeric, msg), batch_index(batch_index) {}
    long batch_index;
};

struct NonFiniteActivation : Error {
    explicit NonFiniteActivation(const std::string& msg) : Error(ExitCode::numeric, msg) {}
};

struct SubsetTooLarge : Error {
    explicit SubsetTooLarge(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(ExitCode::data, msg) {}
};

struct TruncatedRecord : Error {
    TruncatedRecord(const std::string& msg, long record_index)
        : Error(ExitCode::data, msg), record_index(record_index) {}
    long record_index;
};

} // namespace risamc
