#pragma once

#include <stdexcept>
#include <string>

namespace oec {

/// Raised for contract violations: dimension mismatches, invalid
/// hyperparameters, degenerate data.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool ok, const std::string& what)
{
    if (!ok) fail(what);
}

} // namespace detail
} // namespace oec
