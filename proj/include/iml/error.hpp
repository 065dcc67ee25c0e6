#pragma once

#include <stdexcept>
#include <string>

namespace iml {

/// Every recoverable failure in the toolkit is reported as an `iml::error`.
/// The CLI catches these at the top level and turns them into a single-line
/// message plus a nonzero exit code.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool cond, const std::string& what) {
  if (!cond) throw error(what);
}

}  // namespace iml
