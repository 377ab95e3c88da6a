#pragma once

#include <cmath>
#include <vector>

#include "arrayssl/tensor.hpp"

namespace arrayssl {

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    int64_t worst_input = -1;   // which tensor in the input list
    int64_t worst_index = -1;   // flat element index within that tensor
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Compares the backward-pass gradient of a scalar-valued graph builder
// against central finite differences, element by element. The relative error
// uses an absolute floor in the denominator so near-zero gradient entries are
// judged on absolute terms; the numeric difference divides by the perturbation
// actually realized in f32 storage.
template <class F>
GradCheckReport grad_check(F&& f, std::vector<Tensor>& inputs, double rel_tol = 1e-2,
                           double h = 1e-3) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        // inputs the builder ignores must read back a zero gradient, not a
        // stale buffer from an earlier backward pass
        t.node()->grad.assign(t.node()->value.size(), 0.0f);
    }

    Tensor loss = f(inputs);
    if (loss.numel() != 1)
        throw ShapeError("grad_check: builder must return a scalar, got " +
                         shape_str(loss.shape()));
    loss.backward();
    std::vector<std::vector<float>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) analytic.push_back(t.grad());

    GradCheckReport report;
    NoGradGuard no_grad;  // numeric evaluations need no tape
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        float* buf = inputs[ti].data();
        const int64_t n = inputs[ti].numel();
        for (int64_t k = 0; k < n; ++k) {
            const float orig = buf[k];
            const float xp = static_cast<float>(orig + h);
            const float xm = static_cast<float>(orig - h);
            buf[k] = xp;
            const double fp = f(inputs).item_hi();
            buf[k] = xm;
            const double fm = f(inputs).item_hi();
            buf[k] = orig;
            const double denom = static_cast<double>(xp) - static_cast<double>(xm);
            const double numeric = (fp - fm) / denom;
            const double a = analytic[ti][static_cast<size_t>(k)];
            double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 0.1});
            if (rel > rel_tol) {
                // Central differences are not a valid oracle where the probe
                // straddles a kink (a ReLU pre-activation within h of zero):
                // they report the average of the two sides. The sharper test
                // is containment between the one-sided slopes. At a smooth
                // point that interval has width O(h * f''), so it degenerates
                // to the central-difference check and a genuine gradient bug
                // still fails; at a kink it accepts exactly the valid
                // subgradients.
                const double f0 = f(inputs).item_hi();
                const double sp = (fp - f0) / (static_cast<double>(xp) - orig);
                const double sm = (f0 - fm) / (orig - static_cast<double>(xm));
                const double slack =
                    rel_tol * std::max({std::abs(sp), std::abs(sm), 0.1});
                if (a >= std::min(sp, sm) - slack && a <= std::max(sp, sm) + slack)
                    continue;  // a valid one-sided slope, not a wrong gradient
            }
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_input = static_cast<int64_t>(ti);
                report.worst_index = k;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= rel_tol;
    return report;
}

}  // namespace arrayssl
