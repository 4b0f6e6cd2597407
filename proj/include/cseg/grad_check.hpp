#pragma once

#include "cseg/tape.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cseg {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "input[i][j]: analytic a numeric n"
    bool passed = false;
};

struct GradCheckOptions {
    double tol = 1e-4;
    double step = 1e-5;
    // 0 checks every coordinate; otherwise a seeded random subset per input.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 1;
};

// Builds a scalar graph from leaf Vars, one per input tensor.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares tape gradients with central differences. The relative error of a
// coordinate is |a - n| / max(|a|, |n|, 1e-3). Throws UsageError if the
// graph root is not scalar.
GradCheckReport grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt = {});

}  // namespace cseg
