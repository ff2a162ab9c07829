// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace glformer {

// Bad inputs the caller could have checked: malformed configs, shape
// violations, missing files. Maps to process exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures that occur mid-computation: non-finite losses, unreadable
// artifacts, I/O faults. Maps to process exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace glformer
