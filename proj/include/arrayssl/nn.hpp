#pragma once

#include "arrayssl/conv.hpp"
#include "arrayssl/tensor.hpp"

namespace arrayssl {

// Batch normalization over [N, C, ...]: statistics per channel across batch
// and spatial dims. Train mode uses batch statistics and folds them into the
// running estimates as running <- (1-momentum)*running + momentum*batch;
// eval mode reads only the running estimates.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         std::vector<float>& running_mean, std::vector<float>& running_var,
                         bool train, double momentum = 0.1, double eps = 1e-5) {
    if (x.ndim() < 2)
        throw ShapeError("batch_norm: input must be [N,C,...], got " + shape_str(x.shape()));
    const int64_t N = x.dim(0);
    const int64_t C = x.dim(1);
    const int64_t S = x.numel() / (N * C);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(C) +
                         " entries for input " + shape_str(x.shape()));
    if (static_cast<int64_t>(running_mean.size()) != C ||
        static_cast<int64_t>(running_var.size()) != C)
        throw ShapeError("batch_norm: running stats sized for wrong channel count");

    const int64_t M = N * S;  // samples per channel
    std::vector<double> mu(C), istd(C);
    if (train) {
        if (M <= 1)
            throw ValueError("batch_norm: degenerate batch, need more than one value per "
                             "channel in train mode, got input " + shape_str(x.shape()));
        const float* px = x.data();
        for (int64_t c = 0; c < C; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const float* p = px + (n * C + c) * S;
                for (int64_t i = 0; i < S; ++i) {
                    double v = p[i];
                    s += v;
                    s2 += v * v;
                }
            }
            double m = s / M;
            double var = s2 / M - m * m;
            if (var < 0.0) var = 0.0;  // rounding guard
            mu[c] = m;
            istd[c] = 1.0 / std::sqrt(var + eps);
            running_mean[c] = static_cast<float>((1.0 - momentum) * running_mean[c] +
                                                 momentum * m);
            running_var[c] = static_cast<float>((1.0 - momentum) * running_var[c] +
                                                momentum * var);
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mu[c] = running_mean[c];
            istd[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
        }
    }

    auto out = detail::new_node(x.shape());
    {
        const float* px = x.data();
        float* po = out->value.data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const float g = gamma.data()[c];
                const float b = beta.data()[c];
                const float m = static_cast<float>(mu[c]);
                const float is = static_cast<float>(istd[c]);
                const float* p = px + (n * C + c) * S;
                float* q = po + (n * C + c) * S;
                for (int64_t i = 0; i < S; ++i) q[i] = g * (p[i] - m) * is + b;
            }
        }
    }

    if (detail::track({&x, &gamma, &beta})) {
        TensorNode* xn = x.node().get();
        TensorNode* gn = gamma.node().get();
        TensorNode* bn = beta.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node(), gamma.node(), beta.node()},
                       [xn, gn, bn, on, N, C, S, M, mu, istd, train] {
            const float* gout = on->grad.data();
            const float* px = xn->value.data();
            for (int64_t c = 0; c < C; ++c) {
                const double m = mu[c];
                const double is = istd[c];
                double sum_g = 0.0, sum_gx = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const float* gp = gout + (n * C + c) * S;
                    const float* xp = px + (n * C + c) * S;
                    for (int64_t i = 0; i < S; ++i) {
                        double xhat = (xp[i] - m) * is;
                        sum_g += gp[i];
                        sum_gx += gp[i] * xhat;
                    }
                }
                if (gn->requires_grad) gn->grad[c] += static_cast<float>(sum_gx);
                if (bn->requires_grad) bn->grad[c] += static_cast<float>(sum_g);
                if (xn->requires_grad) {
                    const double gam = gn->value[c];
                    if (train) {
                        const double mean_g = sum_g / M;
                        const double mean_gx = sum_gx / M;
                        for (int64_t n = 0; n < N; ++n) {
                            const float* gp = gout + (n * C + c) * S;
                            const float* xp = px + (n * C + c) * S;
                            float* dx = xn->grad.data() + (n * C + c) * S;
                            for (int64_t i = 0; i < S; ++i) {
                                double xhat = (xp[i] - m) * is;
                                dx[i] += static_cast<float>(
                                    gam * is * (gp[i] - mean_g - xhat * mean_gx));
                            }
                        }
                    } else {
                        const float scale = static_cast<float>(gam * is);
                        for (int64_t n = 0; n < N; ++n) {
                            const float* gp = gout + (n * C + c) * S;
                            float* dx = xn->grad.data() + (n * C + c) * S;
                            for (int64_t i = 0; i < S; ++i) dx[i] += scale * gp[i];
                        }
                    }
                }
            }
        });
    }
    return Tensor(out);
}

// Average pooling, no padding. x: [N,C,H,W] -> [N,C,Ho,Wo]
inline Tensor avg_pool2d(const Tensor& x, Stride2 kernel, Stride2 stride) {
    if (x.ndim() != 4)
        throw ShapeError("avg_pool2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t kh = kernel[0], kw = kernel[1], sh = stride[0], sw = stride[1];
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1)
        throw ValueError("avg_pool2d: kernel and stride must be >= 1");
    if (H < kh || W < kw)
        throw ShapeError("avg_pool2d: kernel larger than input " + shape_str(x.shape()));
    const int64_t Ho = (H - kh) / sh + 1;
    const int64_t Wo = (W - kw) / sw + 1;
    auto out = detail::new_node({N, C, Ho, Wo});
    const float inv = 1.0f / static_cast<float>(kh * kw);
    const float* px = x.data();
    float* po = out->value.data();
    for (int64_t u = 0; u < N * C; ++u) {
        const float* xp = px + u * H * W;
        float* op = po + u * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                float acc = 0.0f;
                for (int64_t i = 0; i < kh; ++i)
                    for (int64_t j = 0; j < kw; ++j)
                        acc += xp[(oh * sh + i) * W + ow * sw + j];
                op[oh * Wo + ow] = acc * inv;
            }
        }
    }
    if (detail::track({&x})) {
        TensorNode* xn = x.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node()}, [xn, on, N, C, H, W, Ho, Wo, kh, kw, sh, sw, inv] {
            for (int64_t u = 0; u < N * C; ++u) {
                float* dx = xn->grad.data() + u * H * W;
                const float* gp = on->grad.data() + u * Ho * Wo;
                for (int64_t oh = 0; oh < Ho; ++oh)
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        const float gv = gp[oh * Wo + ow] * inv;
                        for (int64_t i = 0; i < kh; ++i)
                            for (int64_t j = 0; j < kw; ++j)
                                dx[(oh * sh + i) * W + ow * sw + j] += gv;
                    }
            }
        });
    }
    return Tensor(out);
}

// Nearest-neighbor upsampling by integer factors. x: [N,C,H,W] -> [N,C,H*fh,W*fw]
inline Tensor nearest_upsample2d(const Tensor& x, Stride2 factor) {
    if (x.ndim() != 4)
        throw ShapeError("nearest_upsample2d: input must be [N,C,H,W], got " +
                         shape_str(x.shape()));
    const int64_t fh = factor[0], fw = factor[1];
    if (fh < 1 || fw < 1) throw ValueError("nearest_upsample2d: factor must be >= 1");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = H * fh, Wo = W * fw;
    auto out = detail::new_node({N, C, Ho, Wo});
    const float* px = x.data();
    float* po = out->value.data();
    for (int64_t u = 0; u < N * C; ++u) {
        const float* xp = px + u * H * W;
        float* op = po + u * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            const float* xrow = xp + (oh / fh) * W;
            float* orow = op + oh * Wo;
            for (int64_t ow = 0; ow < Wo; ++ow) orow[ow] = xrow[ow / fw];
        }
    }
    if (detail::track({&x})) {
        TensorNode* xn = x.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node()}, [xn, on, N, C, H, W, Ho, Wo, fh, fw] {
            for (int64_t u = 0; u < N * C; ++u) {
                float* dx = xn->grad.data() + u * H * W;
                const float* gp = on->grad.data() + u * Ho * Wo;
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    float* dxrow = dx + (oh / fh) * W;
                    const float* grow = gp + oh * Wo;
                    for (int64_t ow = 0; ow < Wo; ++ow) dxrow[ow / fw] += grow[ow];
                }
            }
        });
    }
    return Tensor(out);
}

// Mean over all spatial dims. x: [N,C,...] -> [N,C]
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() < 3)
        throw ShapeError("global_avg_pool: input must be [N,C,...], got " +
                         shape_str(x.shape()));
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t S = x.numel() / (N * C);
    auto out = detail::new_node({N, C});
    const float* px = x.data();
    float* po = out->value.data();
    for (int64_t u = 0; u < N * C; ++u) {
        double acc = 0.0;
        const float* p = px + u * S;
        for (int64_t i = 0; i < S; ++i) acc += p[i];
        po[u] = static_cast<float>(acc / S);
    }
    if (detail::track({&x})) {
        TensorNode* xn = x.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node()}, [xn, on, N, C, S] {
            for (int64_t u = 0; u < N * C; ++u) {
                const float gv = on->grad[u] / static_cast<float>(S);
                float* dx = xn->grad.data() + u * S;
                for (int64_t i = 0; i < S; ++i) dx[i] += gv;
            }
        });
    }
    return Tensor(out);
}

// Multiply each channel plane by a per-(batch,channel) scale.
// x: [N,C,...], s: [N,C]
inline Tensor scale_channels(const Tensor& x, const Tensor& s) {
    if (x.ndim() < 2 || s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
        throw ShapeError("scale_channels: got x " + shape_str(x.shape()) + ", scale " +
                         shape_str(s.shape()));
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t S = x.numel() / (N * C);
    auto out = detail::new_node(x.shape());
    const float* px = x.data();
    const float* ps = s.data();
    float* po = out->value.data();
    for (int64_t u = 0; u < N * C; ++u) {
        const float sv = ps[u];
        const float* p = px + u * S;
        float* q = po + u * S;
        for (int64_t i = 0; i < S; ++i) q[i] = p[i] * sv;
    }
    if (detail::track({&x, &s})) {
        TensorNode* xn = x.node().get();
        TensorNode* sn = s.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node(), s.node()}, [xn, sn, on, N, C, S] {
            for (int64_t u = 0; u < N * C; ++u) {
                const float* gp = on->grad.data() + u * S;
                if (xn->requires_grad) {
                    const float sv = sn->value[u];
                    float* dx = xn->grad.data() + u * S;
                    for (int64_t i = 0; i < S; ++i) dx[i] += gp[i] * sv;
                }
                if (sn->requires_grad) {
                    const float* xp = xn->value.data() + u * S;
                    double acc = 0.0;
                    for (int64_t i = 0; i < S; ++i) acc += (double)gp[i] * xp[i];
                    sn->grad[u] += static_cast<float>(acc);
                }
            }
        });
    }
    return Tensor(out);
}

// Fully connected layer. x: [N,Din], w: [Dout,Din], b: [Dout] -> [N,Dout]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2)
        throw ShapeError("linear: need x [N,Din] and w [Dout,Din], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const int64_t N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    if (w.dim(1) != Din)
        throw ShapeError("linear: x " + shape_str(x.shape()) + " incompatible with w " +
                         shape_str(w.shape()));
    if (b.numel() != Dout)
        throw ShapeError("linear: bias must have " + std::to_string(Dout) + " entries");
    auto out = detail::new_node({N, Dout});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.data();
    float* po = out->value.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < Dout; ++o)
            po[n * Dout + o] =
                pb[o] + static_cast<float>(detail::dot_rows(px + n * Din, pw + o * Din, Din));
    if (detail::track({&x, &w, &b})) {
        TensorNode* xn = x.node().get();
        TensorNode* wn = w.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {x.node(), w.node(), b.node()}, [xn, wn, bn, on, N, Din, Dout] {
            const float* gp = on->grad.data();
            if (xn->requires_grad)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t o = 0; o < Dout; ++o) {
                        const float gv = gp[n * Dout + o];
                        const float* wr = wn->value.data() + o * Din;
                        float* dx = xn->grad.data() + n * Din;
                        for (int64_t i = 0; i < Din; ++i) dx[i] += gv * wr[i];
                    }
            if (wn->requires_grad)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t o = 0; o < Dout; ++o) {
                        const float gv = gp[n * Dout + o];
                        const float* xr = xn->value.data() + n * Din;
                        float* dw = wn->grad.data() + o * Din;
                        for (int64_t i = 0; i < Din; ++i) dw[i] += gv * xr[i];
                    }
            if (bn->requires_grad)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t o = 0; o < Dout; ++o) bn->grad[o] += gp[n * Dout + o];
        });
    }
    return Tensor(out);
}

// Squeeze-and-excitation gate: per-channel sigmoid scaling computed from the
// globally pooled features through a bottleneck. Works for any [N,C,...].
// w1: [hidden,C], b1: [hidden], w2: [C,hidden], b2: [C]
inline Tensor squeeze_excite(const Tensor& x, const Tensor& w1, const Tensor& b1,
                             const Tensor& w2, const Tensor& b2) {
    const int64_t C = x.dim(1);
    if (w1.ndim() != 2 || w1.dim(1) != C || w2.ndim() != 2 || w2.dim(0) != C)
        throw ShapeError("squeeze_excite: bottleneck weights " + shape_str(w1.shape()) +
                         ", " + shape_str(w2.shape()) + " do not fit input " +
                         shape_str(x.shape()));
    Tensor pooled = global_avg_pool(x);             // [N,C]
    Tensor hidden = relu(linear(pooled, w1, b1));   // [N,hidden]
    Tensor gate = sigmoid(linear(hidden, w2, b2));  // [N,C]
    return scale_channels(x, gate);
}

// hidden width for a squeeze-excite bottleneck; clamped so tiny channel
// counts stay valid
inline int64_t se_hidden_width(int64_t channels, int64_t reduction) {
    return std::max<int64_t>(1, channels / reduction);
}

}  // namespace arrayssl
