#pragma once

#include <stdexcept>
#include <string>

namespace fusionrl {

// Invalid configuration values or unknown configuration keys.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (e.g. stepping a finished episode).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed or mismatched parameter / pool files.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fusionrl
