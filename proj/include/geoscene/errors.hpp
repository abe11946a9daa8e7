#pragma once

#include <stdexcept>
#include <string>

namespace geoscene {

// Process exit codes: 0 success, 1 usage, 2 data/format, 3 numeric.
class error : public std::runtime_error {
public:
    error(std::string msg, int exit_code)
        : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

// Bad flag/parameter values supplied by the caller.
struct param_error : error {
    explicit param_error(std::string m) : error(std::move(m), 1) {}
};

struct usage_error : error {
    explicit usage_error(std::string m) : error(std::move(m), 1) {}
};

// Inconsistent or missing input data (files, matches, datasets).
struct data_error : error {
    explicit data_error(std::string m) : error(std::move(m), 2) {}
};

// Malformed on-disk formats (bad magic, truncation, manifest mismatch).
struct format_error : error {
    explicit format_error(std::string m) : error(std::move(m), 2) {}
};

// Tensor shape disagreements.
struct dim_error : error {
    explicit dim_error(std::string m) : error(std::move(m), 2) {}
};

// API misuse (backward on a consumed tape, non-scalar loss, ...).
struct contract_error : error {
    explicit contract_error(std::string m) : error(std::move(m), 2) {}
};

// NaN/Inf reached a place it must not.
struct numeric_error : error {
    explicit numeric_error(std::string m) : error(std::move(m), 3) {}
};

// Degenerate procedural generation (caller may resample).
struct generation_error : error {
    explicit generation_error(std::string m) : error(std::move(m), 2) {}
};

} // namespace geoscene
