#pragma once

#include <functional>
#include <string>
#include <vector>

#include "proxyattn/autograd.hpp"

namespace proxyattn {

struct ParamGradError {
    std::string name;
    std::size_t coords = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<ParamGradError> per_param;
};

// Builds the scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

// Compares backward() against central differences
//   (f(theta + h e_i) - f(theta - h e_i)) / 2h
// coordinate by coordinate. Error per coordinate is
//   |analytic - numeric| / max(1, |numeric|).
// Parameter values are restored exactly afterwards; grads are left zeroed.
GradCheckReport finite_diff_check(const LossBuilder& f, const std::vector<Parameter*>& params, double h = 1e-6);

}  // namespace proxyattn
