#pragma once

#include <stdexcept>
#include <string>

namespace ulm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument or configuration value.
struct InvalidParameter : Error {
  using Error::Error;
};

// Input that is structurally valid but numerically unusable
// (zero-variance ROI, flat image, degenerate segment).
struct DegenerateInput : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Diverging iteration / non-finite loss.
struct NumericDivergence : Error {
  using Error::Error;
};

}  // namespace ulm
