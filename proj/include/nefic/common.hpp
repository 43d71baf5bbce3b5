// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_COMMON_HPP_
#define NEFIC_COMMON_HPP_

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace nefic {

// Error taxonomy. Every failure surfaces as one of these so the CLI can map
// them to stable exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct CodingError : Error {
  explicit CodingError(const std::string& msg) : Error(msg) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};
struct DependencyError : Error {
  explicit DependencyError(const std::string& msg) : Error(msg) {}
};
struct EvalError : Error {
  explicit EvalError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string str_cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace nefic

#define NEFIC_CHECK(cond, err_type, ...)                       \
  do {                                                         \
    if (!(cond)) throw err_type(::nefic::str_cat(__VA_ARGS__)); \
  } while (0)

#endif  // NEFIC_COMMON_HPP_
