#pragma once

#include <string>
#include <utility>
#include <vector>

#include "arrayssl/nn.hpp"
#include "arrayssl/rng.hpp"

namespace arrayssl {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Non-learned per-layer state (batch-norm running statistics).
struct NamedBuffer {
    std::string name;
    std::vector<float>* data;
};

using ParamList = std::vector<NamedTensor>;
using BufferList = std::vector<NamedBuffer>;

namespace detail {

inline float init_bound(int64_t fan_in) {
    return std::sqrt(1.0f / static_cast<float>(fan_in));
}

inline std::string stride_str(Stride2 s) {
    if (s[0] == 1 && s[1] == 1) return "1";
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + ")";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameterized layers. Weights are uniform in +/-sqrt(1/fan_in), biases 0,
// BN gamma 1 / beta 0; construction order fixes the RNG consumption order.
// ---------------------------------------------------------------------------

struct Conv2dLayer {
    int64_t in_ch = 0, out_ch = 0;
    Stride2 kernel{1, 1}, stride{1, 1}, pad{0, 0};
    Tensor w, b;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t in, int64_t out, Stride2 k, Stride2 s, Stride2 p, Rng& rng)
        : in_ch(in), out_ch(out), kernel(k), stride(s), pad(p) {
        w = Tensor::rand_uniform({out, in, k[0], k[1]}, detail::init_bound(in * k[0] * k[1]),
                                 rng)
                .set_requires_grad();
        b = Tensor::zeros({out}).set_requires_grad();
    }
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
    void collect(const std::string& p, ParamList* ps, BufferList*) {
        ps->push_back({p + ".w", w});
        ps->push_back({p + ".b", b});
    }
};

struct ConvT2dLayer {
    int64_t in_ch = 0, out_ch = 0;
    Stride2 kernel{1, 1}, stride{1, 1}, pad{0, 0}, out_pad{0, 0};
    Tensor w, b;

    ConvT2dLayer() = default;
    ConvT2dLayer(int64_t in, int64_t out, Stride2 k, Stride2 s, Stride2 p, Stride2 op,
                 Rng& rng)
        : in_ch(in), out_ch(out), kernel(k), stride(s), pad(p), out_pad(op) {
        w = Tensor::rand_uniform({in, out, k[0], k[1]}, detail::init_bound(in * k[0] * k[1]),
                                 rng)
                .set_requires_grad();
        b = Tensor::zeros({out}).set_requires_grad();
    }
    Tensor forward(const Tensor& x) const {
        return conv_transpose2d(x, w, b, stride, pad, out_pad);
    }
    void collect(const std::string& p, ParamList* ps, BufferList*) {
        ps->push_back({p + ".w", w});
        ps->push_back({p + ".b", b});
    }
};

struct Conv1dLayer {
    int64_t in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
    Tensor w, b;

    Conv1dLayer() = default;
    Conv1dLayer(int64_t in, int64_t out, int64_t k, int64_t s, int64_t p, Rng& rng)
        : in_ch(in), out_ch(out), kernel(k), stride(s), pad(p) {
        w = Tensor::rand_uniform({out, in, k}, detail::init_bound(in * k), rng)
                .set_requires_grad();
        b = Tensor::zeros({out}).set_requires_grad();
    }
    Tensor forward(const Tensor& x) const { return conv1d(x, w, b, stride, pad); }
    void collect(const std::string& p, ParamList* ps, BufferList*) {
        ps->push_back({p + ".w", w});
        ps->push_back({p + ".b", b});
    }
};

struct BatchNormLayer {
    Tensor gamma, beta;
    std::vector<float> running_mean, running_var;

    BatchNormLayer() = default;
    explicit BatchNormLayer(int64_t channels)
        : gamma(Tensor::full({channels}, 1.0f).set_requires_grad()),
          beta(Tensor::zeros({channels}).set_requires_grad()),
          running_mean(static_cast<size_t>(channels), 0.0f),
          running_var(static_cast<size_t>(channels), 1.0f) {}
    Tensor forward(const Tensor& x, bool train) {
        return batch_norm(x, gamma, beta, running_mean, running_var, train);
    }
    void collect(const std::string& p, ParamList* ps, BufferList* bs) {
        ps->push_back({p + ".gamma", gamma});
        ps->push_back({p + ".beta", beta});
        bs->push_back({p + ".running_mean", &running_mean});
        bs->push_back({p + ".running_var", &running_var});
    }
};

struct SELayer {
    int64_t channels = 0, hidden = 0;
    Tensor w1, b1, w2, b2;

    SELayer() = default;
    SELayer(int64_t c, Rng& rng) : channels(c), hidden(se_hidden_width(c, 8)) {
        w1 = Tensor::rand_uniform({hidden, c}, detail::init_bound(c), rng).set_requires_grad();
        b1 = Tensor::zeros({hidden}).set_requires_grad();
        w2 = Tensor::rand_uniform({c, hidden}, detail::init_bound(hidden), rng)
                 .set_requires_grad();
        b2 = Tensor::zeros({c}).set_requires_grad();
    }
    Tensor forward(const Tensor& x) const { return squeeze_excite(x, w1, b1, w2, b2); }
    void collect(const std::string& p, ParamList* ps, BufferList*) {
        ps->push_back({p + ".w1", w1});
        ps->push_back({p + ".b1", b1});
        ps->push_back({p + ".w2", w2});
        ps->push_back({p + ".b2", b2});
    }
};

// ---------------------------------------------------------------------------
// Residual SE blocks: conv -> BN -> ReLU -> conv -> BN -> SE, added to a
// 1x1-conv + BN skip, then ReLU.
// ---------------------------------------------------------------------------

struct DownBlock {
    Conv2dLayer conv1, conv2, skip;
    BatchNormLayer bn1, bn2, skip_bn;
    SELayer se;

    DownBlock() = default;
    DownBlock(int64_t in, int64_t out, Stride2 kernel, Stride2 stride, Rng& rng) {
        conv1 = Conv2dLayer(in, out, kernel, stride, {kernel[0] / 2, kernel[1] / 2}, rng);
        bn1 = BatchNormLayer(out);
        conv2 = Conv2dLayer(out, out, {3, 3}, {1, 1}, {1, 1}, rng);
        bn2 = BatchNormLayer(out);
        se = SELayer(out, rng);
        skip = Conv2dLayer(in, out, {1, 1}, stride, {0, 0}, rng);
        skip_bn = BatchNormLayer(out);
    }
    Tensor forward(const Tensor& x, bool train) {
        Tensor h = relu(bn1.forward(conv1.forward(x), train));
        h = se.forward(bn2.forward(conv2.forward(h), train));
        Tensor s = skip_bn.forward(skip.forward(x), train);
        return relu(add(h, s));
    }
    void collect(const std::string& p, ParamList* ps, BufferList* bs) {
        conv1.collect(p + ".conv1", ps, bs);
        bn1.collect(p + ".bn1", ps, bs);
        conv2.collect(p + ".conv2", ps, bs);
        bn2.collect(p + ".bn2", ps, bs);
        se.collect(p + ".se", ps, bs);
        skip.collect(p + ".skip", ps, bs);
        skip_bn.collect(p + ".skip_bn", ps, bs);
    }
    std::string summary(const std::string& name) const {
        return name + ": (" + std::to_string(conv1.in_ch) + ", " +
               std::to_string(conv1.out_ch) + ", " + std::to_string(conv1.kernel[0]) + "x" +
               std::to_string(conv1.kernel[1]) + "), stride=" +
               detail::stride_str(conv1.stride);
    }
};

struct UpBlock {
    ConvT2dLayer conv1, skip;
    Conv2dLayer conv2;
    BatchNormLayer bn1, bn2, skip_bn;
    SELayer se;

    UpBlock() = default;
    // Output padding keeps the transposed stride-(2,1) path an exact x2
    // mirror of DownBlock's time halving.
    UpBlock(int64_t in, int64_t out, Stride2 kernel, Stride2 stride, Rng& rng) {
        const Stride2 pad{kernel[0] / 2, kernel[1] / 2};
        const Stride2 out_pad{stride[0] - 1, stride[1] - 1};
        conv1 = ConvT2dLayer(in, out, kernel, stride, pad, out_pad, rng);
        bn1 = BatchNormLayer(out);
        conv2 = Conv2dLayer(out, out, {3, 3}, {1, 1}, {1, 1}, rng);
        bn2 = BatchNormLayer(out);
        se = SELayer(out, rng);
        skip = ConvT2dLayer(in, out, {1, 1}, stride, {0, 0}, {stride[0] - 1, stride[1] - 1},
                            rng);
        skip_bn = BatchNormLayer(out);
    }
    Tensor forward(const Tensor& x, bool train) {
        Tensor h = relu(bn1.forward(conv1.forward(x), train));
        h = se.forward(bn2.forward(conv2.forward(h), train));
        Tensor s = skip_bn.forward(skip.forward(x), train);
        return relu(add(h, s));
    }
    void collect(const std::string& p, ParamList* ps, BufferList* bs) {
        conv1.collect(p + ".conv1", ps, bs);
        bn1.collect(p + ".bn1", ps, bs);
        conv2.collect(p + ".conv2", ps, bs);
        bn2.collect(p + ".bn2", ps, bs);
        se.collect(p + ".se", ps, bs);
        skip.collect(p + ".skip", ps, bs);
        skip_bn.collect(p + ".skip_bn", ps, bs);
    }
    std::string summary(const std::string& name) const {
        return name + ": (" + std::to_string(conv1.in_ch) + ", " +
               std::to_string(conv1.out_ch) + ", " + std::to_string(conv1.kernel[0]) + "x" +
               std::to_string(conv1.kernel[1]) + "), stride=" +
               detail::stride_str(conv1.stride);
    }
};

struct Res1dBlock {
    Conv1dLayer conv1, conv2, skip;
    BatchNormLayer bn1, bn2, skip_bn;
    SELayer se;
    bool softplus_out = false;

    Res1dBlock() = default;
    Res1dBlock(int64_t in, int64_t out, int64_t kernel, bool softplus_output, Rng& rng)
        : softplus_out(softplus_output) {
        conv1 = Conv1dLayer(in, out, kernel, 1, kernel / 2, rng);
        bn1 = BatchNormLayer(out);
        conv2 = Conv1dLayer(out, out, kernel, 1, kernel / 2, rng);
        bn2 = BatchNormLayer(out);
        se = SELayer(out, rng);
        skip = Conv1dLayer(in, out, 1, 1, 0, rng);
        skip_bn = BatchNormLayer(out);
    }
    Tensor forward(const Tensor& x, bool train) {
        Tensor h = relu(bn1.forward(conv1.forward(x), train));
        h = se.forward(bn2.forward(conv2.forward(h), train));
        Tensor s = skip_bn.forward(skip.forward(x), train);
        Tensor sum = add(h, s);
        // the network's terminal block emits positive regression values
        return softplus_out ? softplus(sum) : relu(sum);
    }
    void collect(const std::string& p, ParamList* ps, BufferList* bs) {
        conv1.collect(p + ".conv1", ps, bs);
        bn1.collect(p + ".bn1", ps, bs);
        conv2.collect(p + ".conv2", ps, bs);
        bn2.collect(p + ".bn2", ps, bs);
        se.collect(p + ".se", ps, bs);
        skip.collect(p + ".skip", ps, bs);
        skip_bn.collect(p + ".skip_bn", ps, bs);
    }
    std::string summary(const std::string& name) const {
        return name + ": (" + std::to_string(conv1.in_ch) + ", " +
               std::to_string(conv1.out_ch) + ", " + std::to_string(conv1.kernel) +
               "), stride=1";
    }
};

// ---------------------------------------------------------------------------
// Shared encoder: stem (conv 5x5 + BN + ReLU + SE), avg pool halving time,
// then two stride-(2,1) DownBlocks. [N, 2A, T, F] -> [N, width, T/8, F].
// ---------------------------------------------------------------------------

struct Stem {
    Conv2dLayer conv;
    BatchNormLayer bn;
    SELayer se;

    Stem() = default;
    Stem(int64_t in, int64_t out, Rng& rng) {
        conv = Conv2dLayer(in, out, {5, 5}, {1, 1}, {2, 2}, rng);
        bn = BatchNormLayer(out);
        se = SELayer(out, rng);
    }
    Tensor forward(const Tensor& x, bool train) {
        return se.forward(relu(bn.forward(conv.forward(x), train)));
    }
    void collect(const std::string& p, ParamList* ps, BufferList* bs) {
        conv.collect(p + ".conv", ps, bs);
        bn.collect(p + ".bn", ps, bs);
        se.collect(p + ".se", ps, bs);
    }
    std::string summary(const std::string& name) const {
        return name + ": (" + std::to_string(conv.in_ch) + ", " + std::to_string(conv.out_ch) +
               ", 5x5), stride=1";
    }
};

struct Encoder {
    int64_t in_channels = 0, width = 0;
    Stem stem;
    DownBlock enc1, enc2;

    Encoder() = default;
    Encoder(int64_t in_ch, int64_t w, Rng& rng) : in_channels(in_ch), width(w) {
        stem = Stem(in_ch, w, rng);
        enc1 = DownBlock(w, w, {3, 3}, {2, 1}, rng);
        enc2 = DownBlock(w, w, {3, 3}, {2, 1}, rng);
    }
    Tensor forward(const Tensor& x, bool train) {
        if (x.ndim() != 4 || x.dim(1) != in_channels)
            throw ShapeError("encoder: expected [N," + std::to_string(in_channels) +
                             ",T,F] input, got " + shape_str(x.shape()));
        if (x.dim(2) % 8 != 0)
            throw ShapeError("encoder: time axis of " + shape_str(x.shape()) +
                             " must be divisible by 8");
        Tensor h = stem.forward(x, train);
        h = avg_pool2d(h, {2, 1}, {2, 1});
        h = enc1.forward(h, train);
        return enc2.forward(h, train);
    }
    void collect(ParamList* ps, BufferList* bs) {
        stem.collect("stem", ps, bs);
        enc1.collect("enc1", ps, bs);
        enc2.collect("enc2", ps, bs);
    }
    void summarize(std::vector<std::string>* lines) const {
        lines->push_back(stem.summary("stem"));
        lines->push_back("pool: avg(2x1)");
        lines->push_back(enc1.summary("enc1"));
        lines->push_back(enc2.summary("enc2"));
    }
};

// ---------------------------------------------------------------------------
// In-painting encoder-decoder
// ---------------------------------------------------------------------------

struct InpaintNet {
    int64_t in_channels = 0, width = 0;
    Encoder encoder;
    UpBlock dec1, dec2;
    Conv2dLayer head;

    InpaintNet() = default;
    explicit InpaintNet(int64_t in_ch, Rng& rng, int64_t w = 32)
        : in_channels(in_ch), width(w) {
        encoder = Encoder(in_ch, w, rng);
        dec1 = UpBlock(w, w, {3, 3}, {2, 1}, rng);
        dec2 = UpBlock(w, w, {3, 3}, {2, 1}, rng);
        head = Conv2dLayer(w, in_ch, {5, 5}, {1, 1}, {2, 2}, rng);  // linear output
    }
    // Returns (latent [N,width,T/8,F], reconstruction [N,in_channels,T,F]).
    std::pair<Tensor, Tensor> forward(const Tensor& x, bool train) {
        Tensor latent = encoder.forward(x, train);
        Tensor h = dec1.forward(latent, train);
        h = dec2.forward(h, train);
        h = nearest_upsample2d(h, {2, 1});
        return {latent, head.forward(h)};
    }
    void collect(ParamList* ps, BufferList* bs) {
        encoder.collect(ps, bs);
        dec1.collect("dec1", ps, bs);
        dec2.collect("dec2", ps, bs);
        head.collect("head", ps, bs);
    }
    std::vector<std::string> summarize() const {
        std::vector<std::string> lines;
        encoder.summarize(&lines);
        lines.push_back(dec1.summary("dec1"));
        lines.push_back(dec2.summary("dec2"));
        lines.push_back("unpool: nearest(2x1)");
        lines.push_back("head: (" + std::to_string(head.in_ch) + ", " +
                        std::to_string(head.out_ch) + ", 5x5), stride=1");
        return lines;
    }
};

inline std::pair<Tensor, Tensor> inpaint_forward(InpaintNet& net, const Tensor& x,
                                                 bool train = false) {
    return net.forward(x, train);
}

// ---------------------------------------------------------------------------
// Bandwidth regression network: shared encoder, DownBlocks collapsing the
// time axis to 1, then five channel-halving 1D SE-residual blocks ending in
// softplus. Input [N, 2A, T, F] -> [N, F].
// ---------------------------------------------------------------------------

struct BandwidthNet {
    int64_t in_channels = 0, width = 0, time_steps = 0;
    Encoder encoder;
    std::vector<DownBlock> collapse;
    std::vector<Res1dBlock> head;
    bool encoder_frozen = false;

    BandwidthNet() = default;
    BandwidthNet(int64_t in_ch, int64_t T, Rng& rng, int64_t w = 32)
        : in_channels(in_ch), width(w), time_steps(T) {
        const int64_t latent_t = T / 8;
        if (T < 8 || T % 8 != 0 || (latent_t & (latent_t - 1)) != 0)
            throw ValueError("BandwidthNet: time dimension " + std::to_string(T) +
                             " cannot collapse to 1; need T = 8 * 2^k");
        encoder = Encoder(in_ch, w, rng);
        for (int64_t h = latent_t; h > 1; h /= 2)
            collapse.emplace_back(w, w, Stride2{3, 3}, Stride2{2, 1}, rng);
        int64_t chans = w;
        for (int i = 0; i < 5; ++i) {
            const int64_t out = std::max<int64_t>(1, chans / 2);
            head.emplace_back(chans, out, 5, /*softplus_output=*/i == 4, rng);
            chans = out;
        }
    }
    Tensor forward(const Tensor& x, bool train) {
        if (x.ndim() == 4 && x.dim(2) != time_steps)
            throw ShapeError("BandwidthNet: built for T=" + std::to_string(time_steps) +
                             ", got input " + shape_str(x.shape()));
        const bool enc_train = train && !encoder_frozen;
        Tensor h = encoder.forward(x, enc_train);
        for (auto& blk : collapse) h = blk.forward(h, train);
        h = squeeze(h, 2);  // [N, width, F]
        for (auto& blk : head) h = blk.forward(h, train);
        return squeeze(h, 1);  // [N, F]
    }
    void collect(ParamList* ps, BufferList* bs) {
        encoder.collect(ps, bs);
        for (size_t i = 0; i < collapse.size(); ++i)
            collapse[i].collect("collapse" + std::to_string(i + 1), ps, bs);
        for (size_t i = 0; i < head.size(); ++i)
            head[i].collect("head" + std::to_string(i + 1), ps, bs);
    }
    std::vector<std::string> summarize() const {
        std::vector<std::string> lines;
        encoder.summarize(&lines);
        for (size_t i = 0; i < collapse.size(); ++i)
            lines.push_back(collapse[i].summary("collapse" + std::to_string(i + 1)));
        for (size_t i = 0; i < head.size(); ++i)
            lines.push_back(head[i].summary("head" + std::to_string(i + 1)));
        return lines;
    }
};

inline Tensor bandwidth_forward(BandwidthNet& net, const Tensor& x, bool train = false) {
    return net.forward(x, train);
}

// ---------------------------------------------------------------------------
// Parameter access, transfer, and manifests
// ---------------------------------------------------------------------------

template <class Net>
ParamList named_params(Net& net) {
    ParamList ps;
    BufferList bs;
    net.collect(&ps, &bs);
    return ps;
}

template <class Net>
BufferList named_buffers(Net& net) {
    ParamList ps;
    BufferList bs;
    net.collect(&ps, &bs);
    return bs;
}

// Parameters the optimizer may update; a frozen encoder is excluded.
inline std::vector<Tensor> trainable_params(InpaintNet& net) {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params(net)) out.push_back(t);
    return out;
}

inline std::vector<Tensor> trainable_params(BandwidthNet& net) {
    ParamList enc_ps;
    BufferList enc_bs;
    net.encoder.collect(&enc_ps, &enc_bs);
    size_t encoder_count = enc_ps.size();  // encoder entries come first
    std::vector<Tensor> out;
    ParamList all = named_params(net);
    for (size_t i = 0; i < all.size(); ++i) {
        if (net.encoder_frozen && i < encoder_count) continue;
        out.push_back(all[i].tensor);
    }
    return out;
}

template <class Net>
int64_t count_params(Net& net) {
    int64_t total = 0;
    for (auto& [name, t] : named_params(net)) total += t.numel();
    return total;
}

// Copy the pretrained encoder (weights and BN running statistics) into the
// downstream network. With freeze set, the encoder is excluded from
// optimizer updates and its BN layers stay in eval mode during training.
inline void transfer_encoder(InpaintNet& src, BandwidthNet& dst, bool freeze) {
    if (src.encoder.in_channels != dst.encoder.in_channels ||
        src.encoder.width != dst.encoder.width)
        throw ValueError("transfer_encoder: encoder hyperparameters differ: source (" +
                         std::to_string(src.encoder.in_channels) + " channels, width " +
                         std::to_string(src.encoder.width) + ") vs destination (" +
                         std::to_string(dst.encoder.in_channels) + " channels, width " +
                         std::to_string(dst.encoder.width) + ")");
    ParamList src_ps, dst_ps;
    BufferList src_bs, dst_bs;
    src.encoder.collect(&src_ps, &src_bs);
    dst.encoder.collect(&dst_ps, &dst_bs);
    for (size_t i = 0; i < src_ps.size(); ++i) {
        if (src_ps[i].name != dst_ps[i].name ||
            src_ps[i].tensor.shape() != dst_ps[i].tensor.shape())
            throw ValueError("transfer_encoder: layer mismatch at " + src_ps[i].name);
        dst_ps[i].tensor.values() = src_ps[i].tensor.values();
    }
    for (size_t i = 0; i < src_bs.size(); ++i) *dst_bs[i].data = *src_bs[i].data;
    dst.encoder_frozen = freeze;
}

inline std::string join_lines(const std::vector<std::string>& lines,
                              const std::string& sep = "; ") {
    std::string out;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i) out += sep;
        out += lines[i];
    }
    return out;
}

}  // namespace arrayssl
