#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rulkit {

// Error hierarchy. Everything user-facing derives from Error so callers can
// catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

#define RULKIT_CHECK(cond, msg)                        \
  do {                                                 \
    if (!(cond)) {                                     \
      std::ostringstream oss__;                        \
      oss__ << msg;                                    \
      throw ::rulkit::ValueError(oss__.str());         \
    }                                                  \
  } while (0)

#define RULKIT_CHECK_SHAPE(cond, msg)                  \
  do {                                                 \
    if (!(cond)) {                                     \
      std::ostringstream oss__;                        \
      oss__ << msg;                                    \
      throw ::rulkit::ShapeError(oss__.str());         \
    }                                                  \
  } while (0)

// train/eval switch shared by stochastic and statistics-tracking operators.
enum class Mode { train, eval };

// FNV-1a, used wherever a stable (machine-independent) hash is needed:
// experiment seeds, architecture fingerprints.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string iso_timestamp();

// Non-fatal diagnostics (skipped series, constant channels) go to stderr.
void warn(const std::string& msg);

}  // namespace rulkit
