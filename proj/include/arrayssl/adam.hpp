#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arrayssl/tensor.hpp"

namespace arrayssl {

// Optimizer state for a fixed parameter list. Moment buffers are created
// lazily on the first step and mirror the parameter shapes from then on.
struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<float>> m, v;
};

inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) {
        auto& node = *p.node();
        if (node.requires_grad)
            std::fill(node.grad.begin(), node.grad.end(), 0.0f);
    }
}

// One Adam update with bias correction, reading each parameter's accumulated
// gradient. If any gradient entry is non-finite the whole update is rejected
// before any state is touched, so parameters, moments and step_count are
// left exactly as they were.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
            state.v[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& node = *params[i].node();
        if (!node.requires_grad || node.grad.size() != node.value.size())
            throw ValueError("adam_step: parameter " + std::to_string(i) +
                             " has no gradient buffer");
        if (state.m[i].size() != node.value.size())
            throw ShapeError("adam_step: moment buffer " + std::to_string(i) +
                             " does not match parameter shape " + shape_str(node.shape));
        for (float g : node.grad)
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " +
                                   std::to_string(i) + ", update rejected");
    }

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& node = *params[i].node();
        float* p = node.value.data();
        const float* g = node.grad.data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const size_t n = node.value.size();
        for (size_t k = 0; k < n; ++k) {
            const double gk = g[k];
            const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double update = state.lr * (mk / bc1) / (std::sqrt(vk / bc2) + state.eps);
            p[k] = static_cast<float>(p[k] - update);
        }
    }
}

}  // namespace arrayssl
