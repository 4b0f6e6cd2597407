#include "cseg/grad_check.hpp"

#include "cseg/errors.hpp"
#include "cseg/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cseg {
namespace {

double evaluate(const GraphFn& f, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs) leaves.push_back(t.constant(x));
    const Var root = f(t, leaves);
    if (t.value(root).size() != 1) throw UsageError("grad_check: graph root is not scalar");
    return t.value(root)[0];
}

}  // namespace

GradCheckReport grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(t.variable(x));
    const Var root = f(t, leaves);
    t.backward(root);
    std::vector<Tensor> analytic;
    for (auto v : leaves) analytic.push_back(t.grad(v));

    GradCheckReport rep;
    Rng rng(opt.seed);
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<std::size_t> coords(inputs[i].size());
        std::iota(coords.begin(), coords.end(), 0);
        if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
            for (std::size_t k = 0; k < opt.max_coords_per_input; ++k) {
                std::swap(coords[k], coords[k + rng.below(coords.size() - k)]);
            }
            coords.resize(opt.max_coords_per_input);
        }
        for (auto j : coords) {
            const double x0 = inputs[i][j];
            probe[i][j] = x0 + opt.step;
            const double fp = evaluate(f, probe);
            probe[i][j] = x0 - opt.step;
            const double fm = evaluate(f, probe);
            probe[i][j] = x0;
            const double num = (fp - fm) / (2.0 * opt.step);
            const double a = analytic[i][j];
            const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3});
            ++rep.checked;
            if (err >= rep.max_rel_error) {
                rep.max_rel_error = err;
                std::ostringstream os;
                os << "input[" << i << "][" << j << "]: analytic " << a << " numeric " << num;
                rep.worst = os.str();
            }
        }
    }
    rep.passed = rep.max_rel_error < opt.tol;
    return rep;
}

}  // namespace cseg
