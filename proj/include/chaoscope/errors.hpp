#pragma once

#include <stdexcept>
#include <string>

namespace chaoscope {

// Malformed or unusable run configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A forward pass produced NaN/inf where the probe cannot continue
// (CLI exit code 2).
struct NumericalAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A search exhausted its budget (CLI exit code 3).
struct SearchBudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace chaoscope
