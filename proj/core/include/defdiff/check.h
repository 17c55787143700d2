#pragma once

#include <sstream>
#include <stdexcept>

// Runtime checks. DD_CHECK throws std::runtime_error (state/contract violations),
// DD_CHECK_ARG throws std::invalid_argument (bad user-supplied parameters).
#define DD_CHECK(cond, msg)                                    \
  do {                                                         \
    if (!(cond)) {                                             \
      std::ostringstream oss_;                                 \
      oss_ << "check failed: " << #cond << ": " << msg;        \
      throw std::runtime_error(oss_.str());                    \
    }                                                          \
  } while (0)

#define DD_CHECK_ARG(cond, msg)                                \
  do {                                                         \
    if (!(cond)) {                                             \
      std::ostringstream oss_;                                 \
      oss_ << "invalid argument: " << msg;                     \
      throw std::invalid_argument(oss_.str());                 \
    }                                                          \
  } while (0)
