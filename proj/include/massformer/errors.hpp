#pragma once

#include <stdexcept>
#include <string>

namespace massformer {

// Tensor shapes that do not compose (matmul inner dims, concat axes, ...).
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke an operation's precondition.
struct contract_error : std::logic_error {
    using std::logic_error::logic_error;
};

struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct domain_error : std::domain_error {
    using std::domain_error::domain_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk container.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File written for a different configuration than the one in use.
struct version_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace massformer
