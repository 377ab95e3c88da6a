#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "arrayssl/adam.hpp"
#include "arrayssl/checkpoint.hpp"
#include "arrayssl/gradcheck.hpp"
#include "arrayssl/models.hpp"
#include "test_util.hpp"

using namespace arrayssl;

namespace {

// All parameters of both nets are bitwise-identical.
template <class NetA, class NetB>
bool nets_equal(NetA& a, NetB& b) {
    ParamList pa = named_params(a), pb = named_params(b);
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name) return false;
        if (!testutil::bitwise_equal(pa[i].tensor.values(), pb[i].tensor.values()))
            return false;
    }
    return true;
}

std::vector<float> flatten_params(ParamList& ps) {
    std::vector<float> out;
    for (auto& [name, t] : ps) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

std::string temp_path(const std::string& name) {
    return ::testing::TempDir() + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

TEST(InpaintNet, PaperScaleShapes) {
    Rng rng(1);
    InpaintNet net(8, rng);
    Tensor x = Tensor::randn({2, 8, 32, 2048}, rng);
    auto [latent, recon] = net.forward(x, /*train=*/false);
    EXPECT_EQ(latent.shape(), (Shape{2, 32, 4, 2048}));
    EXPECT_EQ(recon.shape(), (Shape{2, 8, 32, 2048}));
    // the bottleneck holds exactly half as many values as the input
    EXPECT_EQ(latent.numel() * 2, x.numel());
}

TEST(InpaintNet, DeskScaleShapes) {
    Rng rng(2);
    InpaintNet net(8, rng);
    Tensor x = Tensor::randn({3, 8, 8, 512}, rng);
    auto [latent, recon] = net.forward(x, false);
    EXPECT_EQ(latent.shape(), (Shape{3, 32, 1, 512}));
    EXPECT_EQ(recon.shape(), (Shape{3, 8, 8, 512}));
    EXPECT_EQ(latent.numel() * 2, x.numel());
}

TEST(InpaintNet, RejectsBadInputShapes) {
    Rng rng(3);
    InpaintNet net(8, rng);
    EXPECT_THROW(net.forward(Tensor::randn({2, 6, 8, 64}, rng), false), ShapeError);
    EXPECT_THROW(net.forward(Tensor::randn({2, 8, 12, 64}, rng), false), ShapeError);
    EXPECT_THROW(net.forward(Tensor::randn({8, 8, 64}, rng), false), ShapeError);
}

TEST(BandwidthNet, CollapsesTimeAxisForEachLegalDepth) {
    for (int64_t T : {int64_t{8}, int64_t{16}, int64_t{32}}) {
        Rng rng(4);
        BandwidthNet net(8, T, rng);
        Tensor x = Tensor::randn({2, 8, T, 64}, rng);
        Tensor y = net.forward(x, false);
        EXPECT_EQ(y.shape(), (Shape{2, 64})) << "T=" << T;
    }
    Rng rng(4);
    EXPECT_EQ(BandwidthNet(8, 8, rng).collapse.size(), 0u);
    EXPECT_EQ(BandwidthNet(8, 16, rng).collapse.size(), 1u);
    EXPECT_EQ(BandwidthNet(8, 32, rng).collapse.size(), 2u);
}

TEST(BandwidthNet, RejectsUncollapsibleTime) {
    Rng rng(5);
    EXPECT_THROW(BandwidthNet(8, 4, rng), ValueError);
    EXPECT_THROW(BandwidthNet(8, 12, rng), ValueError);
    EXPECT_THROW(BandwidthNet(8, 24, rng), ValueError);
    BandwidthNet net(8, 8, rng);
    EXPECT_THROW(net.forward(Tensor::randn({1, 8, 16, 32}, rng), false), ShapeError);
}

TEST(BandwidthNet, OutputIsStrictlyPositive) {
    Rng rng(6);
    BandwidthNet net(8, 8, rng);
    Tensor x = Tensor::randn({2, 8, 8, 32}, rng);
    Tensor y = net.forward(x, false);
    for (float v : y.values()) EXPECT_GT(v, 0.0f);
}

TEST(BandwidthNet, HeadChannelsHalveDownToOne) {
    Rng rng(7);
    BandwidthNet net(8, 8, rng);
    ASSERT_EQ(net.head.size(), 5u);
    const int64_t expected_in[5] = {32, 16, 8, 4, 2};
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(net.head[i].conv1.in_ch, expected_in[i]);
        EXPECT_EQ(net.head[i].conv1.out_ch, std::max<int64_t>(1, expected_in[i] / 2));
        EXPECT_EQ(net.head[i].conv1.kernel, 5);
        EXPECT_EQ(net.head[i].softplus_out, i == 4);
    }
}

// ---------------------------------------------------------------------------
// Determinism and modes
// ---------------------------------------------------------------------------

TEST(Models, SameSeedGivesIdenticalInitialization) {
    Rng a(42), b(42), c(43);
    InpaintNet na(8, a), nb(8, b), nc(8, c);
    EXPECT_TRUE(nets_equal(na, nb));
    EXPECT_FALSE(nets_equal(na, nc));
}

TEST(Models, EvalForwardIsPureTrainForwardUpdatesRunningStats) {
    Rng rng(8);
    InpaintNet net(8, rng);
    Tensor x = Tensor::randn({2, 8, 8, 32}, rng);
    Tensor y1 = net.forward(x, false).second;
    Tensor y2 = net.forward(x, false).second;
    EXPECT_TRUE(testutil::bitwise_equal(y1.values(), y2.values()));
    std::vector<float> before = net.encoder.stem.bn.running_mean;
    net.forward(x, true);
    EXPECT_FALSE(testutil::bitwise_equal(before, net.encoder.stem.bn.running_mean));
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

TEST(Blocks, DownBlockGradCheckOnInputAndParameters) {
    Rng rng(21);
    DownBlock block(4, 4, {3, 3}, {2, 1}, rng);
    Tensor x = testutil::random_away_from_kinks({1, 4, 4, 8}, rng);
    std::vector<Tensor> inputs = {x, block.conv1.w, block.bn1.gamma, block.bn2.beta,
                                  block.se.w1, block.skip.w};
    // squared output keeps the loss C1-smooth across the block's final ReLU,
    // which the finite-difference oracle needs
    auto f = [&](std::vector<Tensor>& in) {
        Tensor y = block.forward(in[0], true);
        return mean(mul(y, y));
    };
    auto report = grad_check(f, inputs, 2e-2, /*h=*/1e-4);
    EXPECT_TRUE(report.passed) << "worst input " << report.worst_input << " index "
                               << report.worst_index << ": analytic "
                               << report.analytic_at_worst << " vs numeric "
                               << report.numeric_at_worst;
}

TEST(Blocks, UpBlockGradCheckAndShape) {
    Rng rng(22);
    UpBlock block(4, 4, {3, 3}, {2, 1}, rng);
    Tensor probe = Tensor::randn({1, 4, 2, 8}, rng);
    EXPECT_EQ(block.forward(probe, false).shape(), (Shape{1, 4, 4, 8}));

    Tensor x = testutil::random_away_from_kinks({1, 4, 2, 8}, rng);
    std::vector<Tensor> inputs = {x, block.conv1.w, block.conv2.w, block.skip.w};
    auto f = [&](std::vector<Tensor>& in) {
        Tensor y = block.forward(in[0], true);
        return mean(mul(y, y));
    };
    auto report = grad_check(f, inputs, 2e-2);
    EXPECT_TRUE(report.passed) << "worst input " << report.worst_input << " index "
                               << report.worst_index << ": analytic "
                               << report.analytic_at_worst << " vs numeric "
                               << report.numeric_at_worst;
}

TEST(Blocks, Res1dBlockGradCheckBothActivations) {
    for (bool soft : {false, true}) {
        Rng rng(23);
        Res1dBlock block(4, 2, 5, soft, rng);
        Tensor x = testutil::random_away_from_kinks({1, 4, 16}, rng);
        std::vector<Tensor> inputs = {x, block.conv1.w, block.se.w2, block.skip.w};
        auto f = [&](std::vector<Tensor>& in) {
            Tensor y = block.forward(in[0], true);
            return mean(mul(y, y));
        };
        auto report = grad_check(f, inputs, 2e-2);
        EXPECT_TRUE(report.passed)
            << "softplus=" << soft << " worst input " << report.worst_input << " index "
            << report.worst_index << ": analytic " << report.analytic_at_worst
            << " vs numeric " << report.numeric_at_worst;
    }
}

// Spot-check dL/dtheta against central differences for two entries of every
// parameter tensor in the full encoder-decoder.
TEST(InpaintNet, ParameterGradientsMatchFiniteDifferences) {
    Rng rng(24);
    InpaintNet net(8, rng);
    Tensor x = testutil::random_away_from_kinks({1, 8, 8, 64}, rng);
    Tensor target = Tensor::randn({1, 8, 8, 64}, rng);
    auto loss_fn = [&]() { return mse(net.forward(x, true).second, target); };

    ParamList params = named_params(net);
    std::vector<Tensor> tensors;
    for (auto& [name, t] : params) tensors.push_back(t);
    zero_grads(tensors);
    loss_fn().backward();

    const double h = 1e-3;
    int checked = 0;
    for (auto& [name, t] : params) {
        std::vector<int64_t> picks = {0};
        if (t.numel() > 1) picks.push_back(t.numel() / 2);
        for (int64_t idx : picks) {
            const float saved = t.values()[static_cast<size_t>(idx)];
            const float hi = saved + static_cast<float>(h);
            const float lo = saved - static_cast<float>(h);
            double lp, lm;
            {
                NoGradGuard no_grad;
                t.values()[static_cast<size_t>(idx)] = hi;
                lp = loss_fn().item_hi();
                t.values()[static_cast<size_t>(idx)] = lo;
                lm = loss_fn().item_hi();
            }
            t.values()[static_cast<size_t>(idx)] = saved;
            const double numeric =
                (lp - lm) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double analytic = t.grad()[static_cast<size_t>(idx)];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 0.1});
            EXPECT_LT(std::abs(analytic - numeric) / denom, 2e-2)
                << name << "[" << idx << "]: analytic " << analytic << " vs numeric "
                << numeric;
            ++checked;
        }
    }
    EXPECT_GE(checked, 100);  // every tensor contributes
}

TEST(InpaintNet, SingleAdamStepReducesLoss) {
    Rng rng(25);
    InpaintNet net(8, rng);
    Tensor x = Tensor::randn({4, 8, 8, 32}, rng);
    Tensor target = Tensor::randn({4, 8, 8, 32}, rng);
    std::vector<Tensor> params = trainable_params(net);
    AdamState opt;
    opt.lr = 1e-4;

    zero_grads(params);
    Tensor loss0 = mse(net.forward(x, true).second, target);
    loss0.backward();
    adam_step(params, opt);
    NoGradGuard no_grad;
    Tensor loss1 = mse(net.forward(x, true).second, target);
    EXPECT_LT(loss1.item_hi(), loss0.item_hi());
}

// ---------------------------------------------------------------------------
// Summaries and parameter counting
// ---------------------------------------------------------------------------

TEST(Models, SummaryEntriesMatchArchitecture) {
    Rng rng(31);
    InpaintNet inpaint(8, rng);
    std::vector<std::string> lines = inpaint.summarize();
    const std::string joined = join_lines(lines, "\n");
    EXPECT_NE(joined.find("stem: (8, 32, 5x5), stride=1"), std::string::npos) << joined;
    EXPECT_NE(joined.find("enc1: (32, 32, 3x3), stride=(2,1)"), std::string::npos);
    EXPECT_NE(joined.find("enc2: (32, 32, 3x3), stride=(2,1)"), std::string::npos);
    EXPECT_NE(joined.find("dec1: (32, 32, 3x3), stride=(2,1)"), std::string::npos);
    EXPECT_NE(joined.find("head: (32, 8, 5x5), stride=1"), std::string::npos);

    BandwidthNet bw(8, 32, rng);
    const std::string bw_joined = join_lines(bw.summarize(), "\n");
    EXPECT_NE(bw_joined.find("stem: (8, 32, 5x5), stride=1"), std::string::npos);
    EXPECT_NE(bw_joined.find("collapse1: (32, 32, 3x3), stride=(2,1)"), std::string::npos);
    EXPECT_NE(bw_joined.find("collapse2: (32, 32, 3x3), stride=(2,1)"), std::string::npos);
    EXPECT_NE(bw_joined.find("head1: (32, 16, 5), stride=1"), std::string::npos);
    EXPECT_NE(bw_joined.find("head5: (2, 1, 5), stride=1"), std::string::npos);
}

TEST(Models, CountParamsMatchesHandTally) {
    Rng rng(32);
    InpaintNet net(8, rng);
    int64_t by_hand = 0;
    for (auto& [name, t] : named_params(net)) by_hand += t.numel();
    EXPECT_EQ(count_params(net), by_hand);
    // stem conv alone: 32*8*5*5 weights + 32 biases
    EXPECT_EQ(net.encoder.stem.conv.w.numel() + net.encoder.stem.conv.b.numel(), 6432);
    EXPECT_GT(count_params(net), 6432);
}

// ---------------------------------------------------------------------------
// Encoder transfer
// ---------------------------------------------------------------------------

TEST(Transfer, CopiesEncoderBitExactAndLeavesHeadAlone) {
    Rng rng_src(41), rng_dst(99);
    InpaintNet src(8, rng_src);
    BandwidthNet dst(8, 16, rng_dst);

    // perturb source encoder so the copy is distinguishable from luck
    for (auto& [name, t] : named_params(src))
        for (float& v : t.values()) v += 0.25f;
    src.encoder.stem.bn.running_mean[3] = 7.0f;

    ParamList head_before_ps;
    BufferList head_before_bs;
    dst.collect(&head_before_ps, &head_before_bs);
    std::vector<std::vector<float>> head_before;
    for (auto& [name, t] : head_before_ps)
        if (name.rfind("stem", 0) != 0 && name.rfind("enc", 0) != 0)
            head_before.push_back(t.values());

    transfer_encoder(src, dst, /*freeze=*/false);

    ParamList src_ps, dst_ps;
    BufferList src_bs, dst_bs;
    src.encoder.collect(&src_ps, &src_bs);
    dst.encoder.collect(&dst_ps, &dst_bs);
    for (size_t i = 0; i < src_ps.size(); ++i)
        EXPECT_TRUE(
            testutil::bitwise_equal(src_ps[i].tensor.values(), dst_ps[i].tensor.values()))
            << src_ps[i].name;
    for (size_t i = 0; i < src_bs.size(); ++i)
        EXPECT_TRUE(testutil::bitwise_equal(*src_bs[i].data, *dst_bs[i].data))
            << src_bs[i].name;

    ParamList after_ps;
    BufferList after_bs;
    dst.collect(&after_ps, &after_bs);
    size_t j = 0;
    for (auto& [name, t] : after_ps)
        if (name.rfind("stem", 0) != 0 && name.rfind("enc", 0) != 0)
            EXPECT_TRUE(testutil::bitwise_equal(head_before[j++], t.values())) << name;
}

TEST(Transfer, FreezeExcludesEncoderFromOptimizerAndBnUpdates) {
    Rng rng_src(42), rng_dst(43);
    InpaintNet src(8, rng_src);
    BandwidthNet dst(8, 8, rng_dst);
    transfer_encoder(src, dst, /*freeze=*/true);
    EXPECT_TRUE(dst.encoder_frozen);

    ParamList enc_ps;
    BufferList enc_bs;
    dst.encoder.collect(&enc_ps, &enc_bs);
    ParamList all_ps = named_params(dst);
    std::vector<Tensor> trainable = trainable_params(dst);
    EXPECT_EQ(trainable.size(), all_ps.size() - enc_ps.size());
    // every trainable tensor lives outside the encoder
    for (Tensor& t : trainable)
        for (auto& [name, enc_t] : enc_ps) EXPECT_NE(t.node(), enc_t.node());

    // a frozen encoder's BN statistics must not move in train mode
    std::vector<float> enc_mean = dst.encoder.stem.bn.running_mean;
    std::vector<float> head_mean = dst.head[0].bn1.running_mean;
    dst.forward(Tensor::randn({2, 8, 8, 32}, rng_src), /*train=*/true);
    EXPECT_TRUE(testutil::bitwise_equal(enc_mean, dst.encoder.stem.bn.running_mean));
    EXPECT_FALSE(testutil::bitwise_equal(head_mean, dst.head[0].bn1.running_mean));

    dst.encoder_frozen = false;
    EXPECT_EQ(trainable_params(dst).size(), all_ps.size());
    dst.forward(Tensor::randn({2, 8, 8, 32}, rng_src), true);
    EXPECT_FALSE(testutil::bitwise_equal(enc_mean, dst.encoder.stem.bn.running_mean));
}

TEST(Transfer, RejectsMismatchedEncoders) {
    Rng rng(44);
    InpaintNet narrow(8, rng, /*width=*/16);
    BandwidthNet dst(8, 8, rng, /*width=*/32);
    EXPECT_THROW(transfer_encoder(narrow, dst, false), ValueError);
    InpaintNet other_channels(4, rng);
    EXPECT_THROW(transfer_encoder(other_channels, dst, false), ValueError);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripsModelBitExact) {
    Rng rng(51);
    InpaintNet net(8, rng);
    // give running stats non-default values so they are actually exercised
    net.forward(Tensor::randn({2, 8, 8, 32}, rng), true);

    const std::string path = temp_path("roundtrip.nnck");
    Checkpoint ckpt = snapshot(net, {{"arch", join_lines(net.summarize())}, {"note", "x=1"}});
    save_checkpoint(path, ckpt);
    Checkpoint loaded = load_checkpoint(path);

    ASSERT_EQ(loaded.tensors.size(), ckpt.tensors.size());
    for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
        EXPECT_EQ(loaded.tensors[i].name, ckpt.tensors[i].name);
        EXPECT_EQ(loaded.tensors[i].shape, ckpt.tensors[i].shape);
        EXPECT_TRUE(testutil::bitwise_equal(loaded.tensors[i].data, ckpt.tensors[i].data));
    }
    ASSERT_NE(loaded.meta("arch"), nullptr);
    EXPECT_EQ(*loaded.meta("arch"), join_lines(net.summarize()));
    ASSERT_NE(loaded.meta("note"), nullptr);
    EXPECT_EQ(*loaded.meta("note"), "x=1");  // values may contain '='

    Rng rng2(52);
    InpaintNet fresh(8, rng2);
    ASSERT_FALSE(nets_equal(net, fresh));
    restore(fresh, loaded);
    EXPECT_TRUE(nets_equal(net, fresh));
    EXPECT_TRUE(testutil::bitwise_equal(net.encoder.stem.bn.running_mean,
                                        fresh.encoder.stem.bn.running_mean));
    std::remove(path.c_str());
}

TEST(Checkpoint, SavedBytesAreDeterministic) {
    Rng rng(53);
    BandwidthNet net(8, 8, rng);
    const std::string p1 = temp_path("det1.nnck"), p2 = temp_path("det2.nnck");
    save_checkpoint(p1, snapshot(net));
    save_checkpoint(p2, snapshot(net));
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_FALSE(s1.empty());
    EXPECT_EQ(s1, s2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(Checkpoint, RejectsCorruptFiles) {
    Rng rng(54);
    InpaintNet net(8, rng);
    const std::string path = temp_path("corrupt.nnck");
    save_checkpoint(path, snapshot(net));

    // corrupt magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("JUNK", 4);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);

    // unsupported version
    save_checkpoint(path, snapshot(net));
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v = 2;
        f.write(&v, 1);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);

    // truncation in the middle of a payload
    save_checkpoint(path, snapshot(net));
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);

    EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.nnck")), FormatError);
    std::remove(path.c_str());
}

TEST(Checkpoint, RestoreRejectsMismatchedTopology) {
    Rng rng(55);
    InpaintNet wide(8, rng);
    InpaintNet narrow(8, rng, /*width=*/16);
    Checkpoint ckpt = snapshot(wide);
    EXPECT_THROW(restore(narrow, ckpt), ValueError);

    // same tensor count, one shape vandalized
    Checkpoint bad = snapshot(wide);
    bad.tensors[0].shape = {1, 2, 3};
    bad.tensors[0].data.assign(6, 0.0f);
    EXPECT_THROW(restore(wide, bad), ValueError);
}
