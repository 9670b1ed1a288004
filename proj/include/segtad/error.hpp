#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace segtad {

// All recoverable failures in the library throw Error. The CLI catches it at
// the top level and turns the message into a one-line diagnostic.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    detail::msg_append(os, args...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    throw Error(msg(args...));
}

template <typename... Args>
void check(bool cond, const Args&... args) {
    if (!cond) fail(args...);
}

}  // namespace segtad
