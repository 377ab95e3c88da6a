#pragma once

#include <complex>
#include <vector>

#include "arrayssl/rng.hpp"
#include "arrayssl/tensor.hpp"

namespace arrayssl {

// One raw capture frame: A antennas, L complex samples each, stored
// [antenna][sample][re,im].
struct IqFrame {
    int64_t antennas = 0;
    int64_t samples = 0;
    std::vector<float> data;

    IqFrame() = default;
    IqFrame(int64_t a, int64_t l)
        : antennas(a), samples(l), data(static_cast<size_t>(a * l * 2), 0.0f) {
        if (a < 1 || l < 1) throw ValueError("IqFrame: need at least one antenna and sample");
    }

    float& re(int64_t a, int64_t i) { return data[static_cast<size_t>((a * samples + i) * 2)]; }
    float& im(int64_t a, int64_t i) {
        return data[static_cast<size_t>((a * samples + i) * 2 + 1)];
    }
    float re(int64_t a, int64_t i) const {
        return data[static_cast<size_t>((a * samples + i) * 2)];
    }
    float im(int64_t a, int64_t i) const {
        return data[static_cast<size_t>((a * samples + i) * 2 + 1)];
    }
};

// A corrupted/clean training pair. `input` has one antenna's Re/Im channel
// pair zeroed; `target` is the untouched example.
struct MaskedExample {
    Tensor input;
    Tensor target;
    int64_t masked_antenna = -1;
};

// Periodic Hann window: w[i] = 0.5*(1 - cos(2*pi*i/n)).
inline std::vector<double> hann_window(int64_t n) {
    if (n < 2) throw ValueError("hann_window: length must be >= 2, got " + std::to_string(n));
    std::vector<double> w(static_cast<size_t>(n));
    const double step = 2.0 * 3.14159265358979323846 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(step * static_cast<double>(i)));
    return w;
}

namespace detail {

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 FFT, unnormalized forward transform. Twiddles come from
// std::polar per index (not a running product) so n=2048 stays well inside
// the 1e-9 oracle tolerance.
inline void fft_pow2(std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -two_pi / static_cast<double>(len);
        for (size_t i = 0; i < n; i += len) {
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(j));
                std::complex<double> u = x[i + j];
                std::complex<double> v = x[i + j + len / 2] * w;
                x[i + j] = u + v;
                x[i + j + len / 2] = u - v;
            }
        }
    }
}

}  // namespace detail

// Forward DFT, X[k] = sum_m x[m]*exp(-j*2*pi*k*m/n), no normalization.
// Radix-2 FFT for power-of-two lengths, direct evaluation otherwise.
inline std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x) {
    const int64_t n = static_cast<int64_t>(x.size());
    if (n <= 1) return x;
    if (detail::is_pow2(n)) {
        std::vector<std::complex<double>> y = x;
        detail::fft_pow2(y);
        return y;
    }
    std::vector<std::complex<double>> y(static_cast<size_t>(n));
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (int64_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (int64_t m = 0; m < n; ++m)
            acc += x[static_cast<size_t>(m)] *
                   std::polar(1.0, -two_pi * static_cast<double>(k) * static_cast<double>(m) /
                                       static_cast<double>(n));
        y[static_cast<size_t>(k)] = acc;
    }
    return y;
}

// Non-overlapping Hann-windowed STFT. Each antenna's L samples become T
// chunks of F bins; Re/Im of antenna k land in channels 2k and 2k+1.
// Result shape [2A, T, F], unstandardized.
inline Tensor frame_to_stft(const IqFrame& frame, int64_t T, int64_t F) {
    if (T < 1 || F < 2) throw ValueError("frame_to_stft: need T >= 1 and F >= 2");
    if (frame.samples != T * F)
        throw ShapeError("frame_to_stft: " + std::to_string(frame.samples) +
                         " samples do not split into " + std::to_string(T) + " chunks of " +
                         std::to_string(F) + " bins");
    const int64_t A = frame.antennas;
    Tensor out = Tensor::zeros({2 * A, T, F});
    const std::vector<double> window = hann_window(F);
    std::vector<std::complex<double>> chunk(static_cast<size_t>(F));
    float* po = out.data();
    for (int64_t a = 0; a < A; ++a) {
        for (int64_t t = 0; t < T; ++t) {
            const int64_t base = t * F;
            for (int64_t i = 0; i < F; ++i)
                chunk[static_cast<size_t>(i)] =
                    window[static_cast<size_t>(i)] *
                    std::complex<double>(frame.re(a, base + i), frame.im(a, base + i));
            std::vector<std::complex<double>> spec = dft(chunk);
            float* re_row = po + ((2 * a) * T + t) * F;
            float* im_row = po + ((2 * a + 1) * T + t) * F;
            for (int64_t k = 0; k < F; ++k) {
                re_row[k] = static_cast<float>(spec[static_cast<size_t>(k)].real());
                im_row[k] = static_cast<float>(spec[static_cast<size_t>(k)].imag());
            }
        }
    }
    return out;
}

// Zero-mean/unit-variance over every element of the example. A constant
// input cannot be standardized; it comes back as all zeros with the
// degenerate flag set (when requested) rather than aborting a run.
inline Tensor standardize(const Tensor& x, bool* degenerate = nullptr) {
    const int64_t n = x.numel();
    if (n == 0) throw ShapeError("standardize: empty tensor");
    const float* px = x.data();
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += px[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = px[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double std_dev = std::sqrt(var);
    Tensor out = Tensor::zeros(x.shape());
    if (std_dev < 1e-12) {
        if (degenerate) *degenerate = true;
        return out;
    }
    if (degenerate) *degenerate = false;
    const double inv = 1.0 / (std_dev + 1e-12);
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i)
        po[i] = static_cast<float>((px[i] - mean) * inv);
    return out;
}

// Zero one antenna's interleaved Re/Im channel pair. x: [2A, T, F].
inline MaskedExample mask_channels(const Tensor& x, int64_t antenna) {
    if (x.ndim() != 3 || x.dim(0) % 2 != 0)
        throw ShapeError("mask_channels: expected [2A, T, F] example, got " +
                         shape_str(x.shape()));
    const int64_t A = x.dim(0) / 2;
    if (antenna < 0 || antenna >= A)
        throw ValueError("mask_channels: antenna " + std::to_string(antenna) +
                         " out of range for " + std::to_string(A) + " antennas");
    MaskedExample ex;
    ex.target = x;
    ex.input = Tensor::from_data(x.shape(), x.values());
    const int64_t plane = x.dim(1) * x.dim(2);
    float* p = ex.input.data();
    std::fill(p + 2 * antenna * plane, p + (2 * antenna + 2) * plane, 0.0f);
    ex.masked_antenna = antenna;
    return ex;
}

// Uniform antenna pick for the in-painting corruption.
inline int64_t random_antenna(Rng& rng, int64_t antennas) {
    if (antennas < 1) throw ValueError("random_antenna: need at least one antenna");
    return rng.uniform_int(0, antennas - 1);
}

}  // namespace arrayssl
