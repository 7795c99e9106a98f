#ifndef NCMATCH_ERRORS_HPP_
#define NCMATCH_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ncmatch {

/// Base class for malformed or unreadable input data.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BadMagicError : DataError {
  explicit BadMagicError(const std::string& msg) : DataError(msg) {}
};

struct TruncatedFileError : DataError {
  explicit TruncatedFileError(const std::string& msg) : DataError(msg) {}
};

struct DimensionError : DataError {
  explicit DimensionError(const std::string& msg) : DataError(msg) {}
};

}  // namespace ncmatch

#endif  // NCMATCH_ERRORS_HPP_
