#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfv/autograd.hpp"

namespace mfv {

// Builds the checked computation from leaves made of the given inputs. The
// result may have any shape; the harness reduces it to a scalar with a fixed
// pseudo-random weighting so every output coordinate contributes.
using CheckedOp = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// max over all input coordinates of
// |analytic - central_difference| / max(|analytic|, |central_difference|, 1e-8)
double finite_diff_check(const CheckedOp& op, const std::vector<Tensor>& inputs, double step);

struct GradCheckCase {
    std::string name;
    double tolerance;
    double step;
    // one randomized trial; returns the max relative error
    std::function<double(uint64_t seed)> trial;
};

// every differentiable operator, with its tolerance and step size
const std::vector<GradCheckCase>& gradcheck_suite();

struct GradCheckReport {
    std::string name;
    double max_error = 0;
    double tolerance = 0;
    bool passed = false;
};

// runs `trials` randomized instances of one case
GradCheckReport run_gradcheck(const GradCheckCase& c, int trials, uint64_t seed);

}  // namespace mfv
