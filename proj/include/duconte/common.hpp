#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace duconte {

namespace detail {

template <typename... Parts>
std::string join_message(Parts&&... parts) {
  std::ostringstream oss;
  (oss << ... << parts);
  return oss.str();
}

}  // namespace detail

/// Precondition / input validation failure.
template <typename... Parts>
void check_arg(bool cond, Parts&&... parts) {
  if (!cond) throw std::invalid_argument(detail::join_message(parts...));
}

/// Internal consistency / runtime failure.
template <typename... Parts>
void check_state(bool cond, Parts&&... parts) {
  if (!cond) throw std::runtime_error(detail::join_message(parts...));
}

}  // namespace duconte
