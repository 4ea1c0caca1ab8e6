#pragma once

#include <stdexcept>

namespace crowd {

/// File open, read or write failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crowd
