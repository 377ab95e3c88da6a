#pragma once

#include <array>

#include "arrayssl/tensor.hpp"

namespace arrayssl {

using Stride2 = std::array<int64_t, 2>;

namespace detail {

inline int64_t ceil_div_pos(int64_t a, int64_t b) { return a > 0 ? (a + b - 1) / b : 0; }

// Dot product with independent partial sums so the compiler can pack them
// without reassociating a single accumulation chain.
inline double dot_rows(const float* a, const float* b, int64_t n) {
    float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f, s4 = 0.f, s5 = 0.f, s6 = 0.f, s7 = 0.f;
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    float tail = 0.f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (double)(((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + (double)tail;
}

inline double dot_rows_strided(const float* a, const float* b, int64_t n, int64_t bstride) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += (double)a[i] * (double)b[i * bstride];
    return acc;
}

struct Conv2dGeom {
    int64_t N, Ci, H, W;
    int64_t Co, kh, kw;
    int64_t sh, sw, ph, pw;
    int64_t Ho, Wo;
};

inline Conv2dGeom conv2d_geometry(const Tensor& x, const Tensor& w, const Tensor& b,
                                  Stride2 stride, Stride2 pad) {
    if (x.ndim() != 4)
        throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4)
        throw ShapeError("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(w.shape()));
    Conv2dGeom g;
    g.N = x.dim(0); g.Ci = x.dim(1); g.H = x.dim(2); g.W = x.dim(3);
    g.Co = w.dim(0); g.kh = w.dim(2); g.kw = w.dim(3);
    g.sh = stride[0]; g.sw = stride[1]; g.ph = pad[0]; g.pw = pad[1];
    if (w.dim(1) != g.Ci)
        throw ShapeError("conv2d: input channels of " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    if (b.numel() != g.Co)
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " must have " +
                         std::to_string(g.Co) + " entries");
    if (g.kh < 1 || g.kw < 1) throw ValueError("conv2d: kernel dims must be >= 1");
    if (g.sh < 1 || g.sw < 1) throw ValueError("conv2d: stride must be >= 1");
    if (g.ph < 0 || g.pw < 0) throw ValueError("conv2d: padding must be >= 0");
    if (g.H + 2 * g.ph < g.kh || g.W + 2 * g.pw < g.kw)
        throw ShapeError("conv2d: padded input " + shape_str(x.shape()) +
                         " smaller than kernel " + shape_str(w.shape()));
    g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
    g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;
    return g;
}

}  // namespace detail

// Strided 2D convolution, zero padding, no dilation.
// x: [N,Ci,H,W], w: [Co,Ci,kh,kw], b: [Co] -> [N,Co,Ho,Wo]
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Stride2 stride,
                     Stride2 pad) {
    const auto g = detail::conv2d_geometry(x, w, b, stride, pad);
    auto out = detail::new_node({g.N, g.Co, g.Ho, g.Wo});

    const float* px = x.data();
    const float* pw_ = w.data();
    const float* pb = b.data();
    float* po = out->value.data();

    parallel_for(g.N * g.Co, [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            const int64_t n = u / g.Co, co = u % g.Co;
            float* oplane = po + u * g.Ho * g.Wo;
            const float bias = pb[co];
            for (int64_t i = 0; i < g.Ho * g.Wo; ++i) oplane[i] = bias;
            for (int64_t ci = 0; ci < g.Ci; ++ci) {
                const float* xplane = px + (n * g.Ci + ci) * g.H * g.W;
                const float* wplane = pw_ + (co * g.Ci + ci) * g.kh * g.kw;
                for (int64_t i = 0; i < g.kh; ++i) {
                    for (int64_t j = 0; j < g.kw; ++j) {
                        const float wv = wplane[i * g.kw + j];
                        if (wv == 0.0f) continue;
                        // valid output column range for this tap
                        const int64_t lo_ow = detail::ceil_div_pos(g.pw - j, g.sw);
                        const int64_t hi_ow =
                            std::min(g.Wo, g.W - 1 + g.pw - j >= 0
                                               ? (g.W - 1 + g.pw - j) / g.sw + 1
                                               : 0);
                        for (int64_t oh = 0; oh < g.Ho; ++oh) {
                            const int64_t ih = oh * g.sh - g.ph + i;
                            if (ih < 0 || ih >= g.H) continue;
                            const float* xrow = xplane + ih * g.W;
                            float* orow = oplane + oh * g.Wo;
                            if (g.sw == 1) {
                                const float* xr = xrow - g.pw + j;
                                for (int64_t ow = lo_ow; ow < hi_ow; ++ow)
                                    orow[ow] += wv * xr[ow];
                            } else {
                                for (int64_t ow = lo_ow; ow < hi_ow; ++ow)
                                    orow[ow] += wv * xrow[ow * g.sw - g.pw + j];
                            }
                        }
                    }
                }
            }
        }
    });

    if (detail::track({&x, &w, &b})) {
        TensorNode* xn = x.node().get();
        TensorNode* wn = w.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node(), w.node(), b.node()}, [xn, wn, bn, on, g] {
            const float* gout = on->grad.data();
            const float* pxv = xn->value.data();
            const float* pwv = wn->value.data();
            if (xn->requires_grad) {
                float* gx = xn->grad.data();
                // scatter within one batch element; partitioned by n
                parallel_for(g.N, [&](int64_t nlo, int64_t nhi) {
                    for (int64_t n = nlo; n < nhi; ++n) {
                        for (int64_t co = 0; co < g.Co; ++co) {
                            const float* gplane = gout + (n * g.Co + co) * g.Ho * g.Wo;
                            for (int64_t ci = 0; ci < g.Ci; ++ci) {
                                float* gxplane = gx + (n * g.Ci + ci) * g.H * g.W;
                                const float* wplane = pwv + (co * g.Ci + ci) * g.kh * g.kw;
                                for (int64_t i = 0; i < g.kh; ++i) {
                                    for (int64_t j = 0; j < g.kw; ++j) {
                                        const float wv = wplane[i * g.kw + j];
                                        if (wv == 0.0f) continue;
                                        const int64_t lo_ow = detail::ceil_div_pos(g.pw - j, g.sw);
                                        const int64_t hi_ow =
                                            std::min(g.Wo, g.W - 1 + g.pw - j >= 0
                                                               ? (g.W - 1 + g.pw - j) / g.sw + 1
                                                               : 0);
                                        for (int64_t oh = 0; oh < g.Ho; ++oh) {
                                            const int64_t ih = oh * g.sh - g.ph + i;
                                            if (ih < 0 || ih >= g.H) continue;
                                            float* gxrow = gxplane + ih * g.W;
                                            const float* grow = gplane + oh * g.Wo;
                                            if (g.sw == 1) {
                                                float* gxr = gxrow - g.pw + j;
                                                for (int64_t ow = lo_ow; ow < hi_ow; ++ow)
                                                    gxr[ow] += wv * grow[ow];
                                            } else {
                                                for (int64_t ow = lo_ow; ow < hi_ow; ++ow)
                                                    gxrow[ow * g.sw - g.pw + j] += wv * grow[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (wn->requires_grad) {
                float* gw = wn->grad.data();
                // each weight element is an independent reduction; partitioned by co
                parallel_for(g.Co, [&](int64_t clo, int64_t chi) {
                    for (int64_t co = clo; co < chi; ++co) {
                        for (int64_t ci = 0; ci < g.Ci; ++ci) {
                            for (int64_t i = 0; i < g.kh; ++i) {
                                for (int64_t j = 0; j < g.kw; ++j) {
                                    const int64_t lo_ow = detail::ceil_div_pos(g.pw - j, g.sw);
                                    const int64_t hi_ow =
                                        std::min(g.Wo, g.W - 1 + g.pw - j >= 0
                                                           ? (g.W - 1 + g.pw - j) / g.sw + 1
                                                           : 0);
                                    double acc = 0.0;
                                    for (int64_t n = 0; n < g.N; ++n) {
                                        const float* gplane =
                                            gout + (n * g.Co + co) * g.Ho * g.Wo;
                                        const float* xplane =
                                            pxv + (n * g.Ci + ci) * g.H * g.W;
                                        for (int64_t oh = 0; oh < g.Ho; ++oh) {
                                            const int64_t ih = oh * g.sh - g.ph + i;
                                            if (ih < 0 || ih >= g.H) continue;
                                            const float* grow = gplane + oh * g.Wo;
                                            const float* xrow = xplane + ih * g.W;
                                            if (hi_ow <= lo_ow) continue;
                                            if (g.sw == 1)
                                                acc += detail::dot_rows(
                                                    grow + lo_ow, xrow + lo_ow * 1 - g.pw + j,
                                                    hi_ow - lo_ow);
                                            else
                                                acc += detail::dot_rows_strided(
                                                    grow + lo_ow,
                                                    xrow + lo_ow * g.sw - g.pw + j,
                                                    hi_ow - lo_ow, g.sw);
                                        }
                                    }
                                    gw[((co * g.Ci + ci) * g.kh + i) * g.kw + j] +=
                                        static_cast<float>(acc);
                                }
                            }
                        }
                    }
                });
            }
            if (bn->requires_grad) {
                for (int64_t co = 0; co < g.Co; ++co) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < g.N; ++n) {
                        const float* gplane = gout + (n * g.Co + co) * g.Ho * g.Wo;
                        for (int64_t i = 0; i < g.Ho * g.Wo; ++i) acc += gplane[i];
                    }
                    bn->grad[co] += static_cast<float>(acc);
                }
            }
        });
    }
    return Tensor(out);
}

namespace detail {

struct ConvT2dGeom {
    int64_t N, Ci, H, W;
    int64_t Co, kh, kw;
    int64_t sh, sw, ph, pw, oph, opw;
    int64_t Ho, Wo;
};

inline ConvT2dGeom convt2d_geometry(const Tensor& x, const Tensor& w, const Tensor& b,
                                    Stride2 stride, Stride2 pad, Stride2 out_pad) {
    if (x.ndim() != 4)
        throw ShapeError("conv_transpose2d: input must be [N,C,H,W], got " +
                         shape_str(x.shape()));
    if (w.ndim() != 4)
        throw ShapeError("conv_transpose2d: weight must be [Ci,Co,kh,kw], got " +
                         shape_str(w.shape()));
    ConvT2dGeom g;
    g.N = x.dim(0); g.Ci = x.dim(1); g.H = x.dim(2); g.W = x.dim(3);
    g.Co = w.dim(1); g.kh = w.dim(2); g.kw = w.dim(3);
    g.sh = stride[0]; g.sw = stride[1]; g.ph = pad[0]; g.pw = pad[1];
    g.oph = out_pad[0]; g.opw = out_pad[1];
    if (w.dim(0) != g.Ci)
        throw ShapeError("conv_transpose2d: input channels of " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    if (b.numel() != g.Co)
        throw ShapeError("conv_transpose2d: bias must have " + std::to_string(g.Co) +
                         " entries, got " + shape_str(b.shape()));
    if (g.sh < 1 || g.sw < 1) throw ValueError("conv_transpose2d: stride must be >= 1");
    if (g.ph < 0 || g.pw < 0) throw ValueError("conv_transpose2d: padding must be >= 0");
    if (g.oph >= g.sh || g.opw >= g.sw || g.oph < 0 || g.opw < 0)
        throw ValueError("conv_transpose2d: output_padding must be in [0, stride)");
    g.Ho = (g.H - 1) * g.sh - 2 * g.ph + g.kh + g.oph;
    g.Wo = (g.W - 1) * g.sw - 2 * g.pw + g.kw + g.opw;
    if (g.Ho < 1 || g.Wo < 1)
        throw ShapeError("conv_transpose2d: empty output for input " + shape_str(x.shape()));
    return g;
}

}  // namespace detail

// Transposed 2D convolution (adjoint of conv2d with the same geometry).
// x: [N,Ci,H,W], w: [Ci,Co,kh,kw], b: [Co] -> [N,Co,Ho,Wo]
// Ho = (H-1)*sh - 2*ph + kh + oph
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                               Stride2 stride, Stride2 pad, Stride2 out_pad = {0, 0}) {
    const auto g = detail::convt2d_geometry(x, w, b, stride, pad, out_pad);
    auto out = detail::new_node({g.N, g.Co, g.Ho, g.Wo});

    const float* px = x.data();
    const float* pw_ = w.data();
    const float* pb = b.data();
    float* po = out->value.data();

    parallel_for(g.N * g.Co, [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            const int64_t n = u / g.Co, co = u % g.Co;
            float* oplane = po + u * g.Ho * g.Wo;
            const float bias = pb[co];
            for (int64_t i = 0; i < g.Ho * g.Wo; ++i) oplane[i] = bias;
            for (int64_t ci = 0; ci < g.Ci; ++ci) {
                const float* xplane = px + (n * g.Ci + ci) * g.H * g.W;
                const float* wplane = pw_ + (ci * g.Co + co) * g.kh * g.kw;
                for (int64_t i = 0; i < g.kh; ++i) {
                    for (int64_t j = 0; j < g.kw; ++j) {
                        const float wv = wplane[i * g.kw + j];
                        if (wv == 0.0f) continue;
                        for (int64_t ih = 0; ih < g.H; ++ih) {
                            const int64_t oh = ih * g.sh - g.ph + i;
                            if (oh < 0 || oh >= g.Ho) continue;
                            const float* xrow = xplane + ih * g.W;
                            float* orow = oplane + oh * g.Wo;
                            // ow = iw*sw - pw + j
                            const int64_t lo_iw = detail::ceil_div_pos(g.pw - j, g.sw);
                            const int64_t hi_iw =
                                std::min(g.W, g.Wo - 1 + g.pw - j >= 0
                                                  ? (g.Wo - 1 + g.pw - j) / g.sw + 1
                                                  : 0);
                            if (g.sw == 1) {
                                float* orr = orow - g.pw + j;
                                for (int64_t iw = lo_iw; iw < hi_iw; ++iw)
                                    orr[iw] += wv * xrow[iw];
                            } else {
                                for (int64_t iw = lo_iw; iw < hi_iw; ++iw)
                                    orow[iw * g.sw - g.pw + j] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    });

    if (detail::track({&x, &w, &b})) {
        TensorNode* xn = x.node().get();
        TensorNode* wn = w.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node(), w.node(), b.node()}, [xn, wn, bn, on, g] {
            const float* gout = on->grad.data();
            const float* pxv = xn->value.data();
            const float* pwv = wn->value.data();
            if (xn->requires_grad) {
                float* gx = xn->grad.data();
                // dx is a plain convolution of gout with w
                parallel_for(g.N, [&](int64_t nlo, int64_t nhi) {
                    for (int64_t n = nlo; n < nhi; ++n) {
                        for (int64_t ci = 0; ci < g.Ci; ++ci) {
                            float* gxplane = gx + (n * g.Ci + ci) * g.H * g.W;
                            for (int64_t co = 0; co < g.Co; ++co) {
                                const float* gplane = gout + (n * g.Co + co) * g.Ho * g.Wo;
                                const float* wplane = pwv + (ci * g.Co + co) * g.kh * g.kw;
                                for (int64_t i = 0; i < g.kh; ++i) {
                                    for (int64_t j = 0; j < g.kw; ++j) {
                                        const float wv = wplane[i * g.kw + j];
                                        if (wv == 0.0f) continue;
                                        const int64_t lo_iw = detail::ceil_div_pos(g.pw - j, g.sw);
                                        const int64_t hi_iw =
                                            std::min(g.W, g.Wo - 1 + g.pw - j >= 0
                                                              ? (g.Wo - 1 + g.pw - j) / g.sw + 1
                                                              : 0);
                                        for (int64_t ih = 0; ih < g.H; ++ih) {
                                            const int64_t oh = ih * g.sh - g.ph + i;
                                            if (oh < 0 || oh >= g.Ho) continue;
                                            float* gxrow = gxplane + ih * g.W;
                                            const float* grow = gplane + oh * g.Wo;
                                            if (g.sw == 1) {
                                                const float* gr = grow - g.pw + j;
                                                for (int64_t iw = lo_iw; iw < hi_iw; ++iw)
                                                    gxrow[iw] += wv * gr[iw];
                                            } else {
                                                for (int64_t iw = lo_iw; iw < hi_iw; ++iw)
                                                    gxrow[iw] += wv * grow[iw * g.sw - g.pw + j];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (wn->requires_grad) {
                float* gw = wn->grad.data();
                parallel_for(g.Ci, [&](int64_t clo, int64_t chi) {
                    for (int64_t ci = clo; ci < chi; ++ci) {
                        for (int64_t co = 0; co < g.Co; ++co) {
                            for (int64_t i = 0; i < g.kh; ++i) {
                                for (int64_t j = 0; j < g.kw; ++j) {
                                    const int64_t lo_iw = detail::ceil_div_pos(g.pw - j, g.sw);
                                    const int64_t hi_iw =
                                        std::min(g.W, g.Wo - 1 + g.pw - j >= 0
                                                          ? (g.Wo - 1 + g.pw - j) / g.sw + 1
                                                          : 0);
                                    double acc = 0.0;
                                    for (int64_t n = 0; n < g.N; ++n) {
                                        const float* xplane =
                                            pxv + (n * g.Ci + ci) * g.H * g.W;
                                        const float* gplane =
                                            gout + (n * g.Co + co) * g.Ho * g.Wo;
                                        for (int64_t ih = 0; ih < g.H; ++ih) {
                                            const int64_t oh = ih * g.sh - g.ph + i;
                                            if (oh < 0 || oh >= g.Ho) continue;
                                            const float* xrow = xplane + ih * g.W;
                                            const float* grow = gplane + oh * g.Wo;
                                            if (hi_iw <= lo_iw) continue;
                                            if (g.sw == 1)
                                                acc += detail::dot_rows(
                                                    xrow + lo_iw, grow + lo_iw - g.pw + j,
                                                    hi_iw - lo_iw);
                                            else
                                                acc += detail::dot_rows_strided(
                                                    xrow + lo_iw,
                                                    grow + lo_iw * g.sw - g.pw + j,
                                                    hi_iw - lo_iw, g.sw);
                                        }
                                    }
                                    gw[((ci * g.Co + co) * g.kh + i) * g.kw + j] +=
                                        static_cast<float>(acc);
                                }
                            }
                        }
                    }
                });
            }
            if (bn->requires_grad) {
                for (int64_t co = 0; co < g.Co; ++co) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < g.N; ++n) {
                        const float* gplane = gout + (n * g.Co + co) * g.Ho * g.Wo;
                        for (int64_t i = 0; i < g.Ho * g.Wo; ++i) acc += gplane[i];
                    }
                    bn->grad[co] += static_cast<float>(acc);
                }
            }
        });
    }
    return Tensor(out);
}

// 1D convolution. x: [N,Ci,L], w: [Co,Ci,k], b: [Co] -> [N,Co,Lo]
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
                     int64_t pad) {
    if (x.ndim() != 3)
        throw ShapeError("conv1d: input must be [N,C,L], got " + shape_str(x.shape()));
    if (w.ndim() != 3)
        throw ShapeError("conv1d: weight must be [Co,Ci,k], got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv1d: input channels of " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    // reuse the 2D kernels with a singleton height axis
    Tensor x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
    Tensor w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
    Tensor y4 = conv2d(x4, w4, b, {1, stride}, {0, pad});
    return reshape(y4, {y4.dim(0), y4.dim(1), y4.dim(3)});
}

}  // namespace arrayssl
