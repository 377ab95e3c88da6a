#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "arrayssl/rng.hpp"
#include "arrayssl/tensor.hpp"

namespace testutil {

// Random tensor with entries kept away from a set of kink points (relu/abs
// style non-differentiabilities make central differences meaningless there).
inline arrayssl::Tensor random_away_from_kinks(arrayssl::Shape shape, arrayssl::Rng& rng,
                                               float lo = -2.0f, float hi = 2.0f,
                                               float margin = 0.05f) {
    arrayssl::Tensor t = arrayssl::Tensor::zeros(std::move(shape));
    for (float& v : t.values()) {
        do {
            v = static_cast<float>(rng.uniform(lo, hi));
        } while (std::abs(v) < margin);
    }
    return t;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

inline bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        // compare representations so 0.0f == -0.0f does not mask a drift
        if (std::memcmp(&a[i], &b[i], sizeof(float)) != 0) return false;
    }
    return true;
}

}  // namespace testutil
