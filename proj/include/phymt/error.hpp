// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace phymt {

enum class ErrorKind {
    kInvalidInput,
    kSingularSystem,
    kNumericalFailure,
    kShape,
    kFormat,
    kCorruptFile,
    kIo,
    kCapacity,
    kDegenerateOutput,
    kDegenerateStats,
    kInvalidRank,
    kMissingData,
    kValidation,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace phymt
