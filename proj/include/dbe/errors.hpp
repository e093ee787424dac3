#ifndef DBE_ERRORS_HPP
#define DBE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dbe {

// Malformed or missing input: files, vocabularies, dimension mismatches.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values in objectives, gradients, or parameters.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dbe

#endif  // DBE_ERRORS_HPP
