#pragma once

#include <stdexcept>
#include <string>

namespace scl {

// Shapes that do not conform for an operation.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values, zero norms and similar numerical failures.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct VocabError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed samples, captions or files.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace scl
