#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace emd {

/// Bad or inconsistent data: malformed files, impossible sampling requests,
/// blank training targets. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric breakdown during optimization (NaN/Inf). Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename Head, typename... Tail>
void msg_append(std::ostringstream& os, Head&& head, Tail&&... tail) {
    os << head;
    msg_append(os, std::forward<Tail>(tail)...);
}
} // namespace detail

/// Builds an error message from stream-able pieces.
template <typename... Parts>
std::string msg(Parts&&... parts) {
    std::ostringstream os;
    detail::msg_append(os, std::forward<Parts>(parts)...);
    return os.str();
}

} // namespace emd
