#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "pslstm/parameter.hpp"
#include "pslstm/slstm.hpp"

namespace pslstm {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
    /// Coordinates where both derivatives sit below the difference quotient's
    /// rounding resolution (32 ulp of the loss over 2*epsilon); scored as 0.
    std::size_t below_resolution = 0;
};

/// Compares analytic gradients against central finite differences over every
/// trainable coordinate. `loss` evaluates the scalar objective at the current
/// parameter values; `compute_grads` fills every ParamView::grad at those values.
/// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|), except
/// that a pair of derivatives both inside the rounding resolution counts as 0.
GradCheckResult grad_check(const ParamList& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double epsilon = 1e-5);

/// Small single-layer fragments with a fixed random linear read-out as loss.
GradCheckResult grad_check_slstm(const GateMode& mode, std::size_t input, std::size_t hidden, std::size_t heads,
                                 std::size_t seq_len, std::size_t batch, std::uint64_t seed, double epsilon = 1e-5);
GradCheckResult grad_check_lstm(std::size_t input, std::size_t hidden, std::size_t seq_len, std::uint64_t seed,
                                double epsilon = 1e-5);
GradCheckResult grad_check_linear(std::size_t input, std::size_t output, std::size_t rows, std::uint64_t seed,
                                  double epsilon = 1e-5);

}  // namespace pslstm
