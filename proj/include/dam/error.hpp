#pragma once

#include <stdexcept>
#include <string>

namespace dam {

// Bad user input: malformed config, schema violations, impossible requests.
// The CLI maps this to exit code 2.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime: non-convergence, singular solves, degenerate
// strata. The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dam
