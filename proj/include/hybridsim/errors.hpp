#pragma once

#include <stdexcept>
#include <string>

namespace hybridsim {

// Bad arguments or malformed inputs (ids out of range, shape mismatches, ...).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A physical pool or memory budget cannot satisfy the request.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An assembled configuration is internally inconsistent.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hybridsim
