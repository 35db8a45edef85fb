#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace varcp {

/// Invalid configuration or argument values (bad alpha, malformed grids, ...).
class config_error : public std::invalid_argument {
public:
    explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or insufficient input data (ragged CSV rows, too-short streams, ...).
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure: non-convergence, degenerate moments, unstable models.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when coordinate descent exhausts its sweep budget. Carries the last
/// iterate and the worst KKT violation so callers can inspect how close it got.
class convergence_error : public numerical_error {
public:
    convergence_error(const std::string& what, std::vector<double> last_iterate, double kkt_residual)
        : numerical_error(what), last_iterate_(std::move(last_iterate)), kkt_residual_(kkt_residual) {}

    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
    double kkt_residual() const noexcept { return kkt_residual_; }

private:
    std::vector<double> last_iterate_;
    double kkt_residual_;
};

}  // namespace varcp
