#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace consensus {

/// Runtime error with a stable, machine-parsable category string.
/// Categories are short kebab-case tokens ("missing-file", "non-submodular", ...)
/// that the CLI prints verbatim on failure.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(category + ": " + message),
          category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

[[noreturn]] inline void fail(const std::string& category, const std::string& message) {
    throw Error(category, message);
}

inline void require(bool cond, const std::string& category, const std::string& message) {
    if (!cond) fail(category, message);
}

} // namespace consensus
