#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "alamo/nn/checkpoint.hpp"
#include "alamo/nn/model.hpp"
#include "alamo/rng.hpp"
#include "oracles.hpp"

using namespace alamo;
using namespace alamo::nn;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

ModelConfig tiny(Arch arch = Arch::Dense, NormMode norm = NormMode::None) {
    ModelConfig c;
    c.arch = arch;
    c.k = 2;
    c.f = 2;
    c.depth = 2;
    c.layers_per_block = 2;
    c.slab = 2;
    c.norm = norm;
    return c;
}

}  // namespace

TEST(Conv, DeltaKernelIsIdentity) {
    Rng rng(0);
    const auto x = random_tensor({1, 5, 6}, rng);
    Tensor<double> w({1, 1, 3, 3});
    w[4] = 1.0;
    const auto y = kernels::conv2d_forward(x, w, Tensor<double>({1}), 1, 1);
    EXPECT_EQ(y, x);
}

TEST(Conv, OnesKernelSumsWindow) {
    const Tensor<double> x({1, 5, 5}, 2.0);
    const Tensor<double> w({1, 1, 3, 3}, 1.0);
    const auto y = kernels::conv2d_forward(x, w, Tensor<double>(), 1, 1);
    EXPECT_DOUBLE_EQ(y.at(0, 2, 2), 18.0);
    EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 8.0);
}

TEST(Conv, MatchesNestedLoopOracle) {
    Rng rng(1);
    for (auto [stride, pad, ks, cin] : {std::tuple{1u, 1u, 3u, 1u}, {1u, 0u, 1u, 3u}, {2u, 1u, 3u, 2u}, {1u, 0u, 3u, 2u}}) {
        const auto x = random_tensor({cin, 4, 4}, rng);
        const auto w = random_tensor({2, cin, ks, ks}, rng);
        const auto b = random_tensor({2}, rng);
        const auto y = kernels::conv2d_forward(x, w, b, stride, pad);
        const auto ref = oracle::naive_conv(x.storage(), cin, 4, 4, w.storage(), 2, ks, b.storage(), stride, pad);
        ASSERT_EQ(y.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Conv, ChannelMismatchThrows) {
    EXPECT_THROW((void)kernels::conv2d_forward(Tensor<double>({2, 4, 4}), Tensor<double>({1, 3, 3, 3}),
                                               Tensor<double>(), 1, 1),
                 ShapeError);
}

TEST(Elu, DefinitionCases) {
    Tape<double> t(false);
    const Var x = t.leaf(Tensor<double>({1, 1, 3}, std::vector<double>{0.0, 2.0, -1000.0}));
    const auto& y = t.value(elu(t, x));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 2.0);
    EXPECT_NEAR(y[2], -1.0, 1e-6);
}

TEST(Pool, AverageOfWindow) {
    const Tensor<double> x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(kernels::avg_pool2_forward(x)[0], 2.5);
    Tape<double> t(false);
    EXPECT_THROW((void)avg_pool2(t, t.leaf(Tensor<double>({1, 3, 2}))), ShapeError);
}

TEST(Softmax, ZerosAreUniform) {
    Tape<double> t(false);
    const auto& p = t.value(softmax_groups(t, t.leaf(Tensor<double>({11, 2, 2})), 11));
    for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 11.0, 1e-15);
}

TEST(Softmax, CrossEntropyEdgeCases) {
    Tape<double> t(false);
    // Uniform predictions: ln 11 for any labels.
    const std::vector<std::uint8_t> labels{0, 3, 10, 7};
    const Var uni = cross_entropy_groups(t, t.leaf(Tensor<double>({11, 2, 2})), labels, 11);
    EXPECT_NEAR(t.value(uni)[0], std::log(11.0), 1e-12);
    // Near one-hot predictions: CE -> 0.
    Tensor<double> logits({11, 2, 2}, -200.0);
    for (std::size_t i = 0; i < 4; ++i) logits.at(labels[i], i / 2, i % 2) = 200.0;
    EXPECT_NEAR(t.value(cross_entropy_groups(t, t.leaf(logits), labels, 11))[0], 0.0, 1e-12);
}

TEST(Norm, InstanceNormOfPlusMinusOne) {
    Tape<double> t(false);
    const Var x = t.leaf(Tensor<double>({1, 1, 2}, std::vector<double>{-1.0, 1.0}));
    const Var scale = t.leaf(Tensor<double>({1}, 1.0));
    const Var shift = t.leaf(Tensor<double>({1}, 0.0));
    const auto& y = t.value(normalize_batch(t, x, scale, shift, StatScope::PerChannel, 1e-5));
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y[0], -expect, 1e-15);
    EXPECT_NEAR(y[1], expect, 1e-15);
}

TEST(Norm, FixedStatsDifferFromBatchStats) {
    Rng rng(2);
    Tape<double> t(false);
    const Var x = t.leaf(random_tensor({2, 4, 4}, rng));
    const Var scale = t.leaf(Tensor<double>({2}, 1.0));
    const Var shift = t.leaf(Tensor<double>({2}, 0.0));
    const std::vector<double> mean{0.3, -0.2}, var{2.0, 0.5};
    const Tensor<double> a = t.value(normalize_batch(t, x, scale, shift, StatScope::PerChannel, 1e-5));
    const Tensor<double> b = t.value(normalize_fixed(t, x, scale, shift, std::span<const double>(mean),
                                            std::span<const double>(var), 1e-5));
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-3);
}

TEST(Network, MinimalShape) {
    ModelConfig c;
    c.k = 2;
    c.depth = 1;
    c.layers_per_block = 1;
    c.slab = 1;
    const Network<float> net(c, 0);
    Tape<float> t(false);
    const auto r = net.forward(t, t.leaf(Tensor<float>({1, 8, 8})), Mode::Inference);
    EXPECT_EQ(t.value(r.probs).shape(), (Shape{11, 8, 8}));
}

TEST(Network, ZeroInputGivesUniformProbabilities) {
    for (Arch arch : {Arch::Dense, Arch::Plain}) {
        const Network<double> net(tiny(arch), 3);
        Tape<double> t(false);
        const auto r = net.forward(t, t.leaf(Tensor<double>({2, 8, 8})), Mode::Inference);
        for (double p : t.value(r.probs).values()) EXPECT_NEAR(p, 1.0 / 11.0, 1e-12);
    }
}

TEST(Network, ProbabilitiesNormalizedPerVoxel) {
    Rng rng(4);
    for (NormMode norm : {NormMode::None, NormMode::BN, NormMode::IN, NormMode::LN}) {
        const Network<double> net(tiny(Arch::Dense, norm), 5);
        Tape<double> t(false);
        const auto r = net.forward(t, t.leaf(random_tensor({2, 8, 8}, rng)), Mode::Train);
        const auto& p = t.value(r.probs);
        for (std::size_t g = 0; g < 2; ++g)
            for (std::size_t i = 0; i < 64; ++i) {
                double s = 0;
                for (std::size_t c = 0; c < 11; ++c) s += p[(g * 11 + c) * 64 + i];
                ASSERT_NEAR(s, 1.0, 1e-12);
            }
    }
}

TEST(Network, AuxHeadsOnlyInTraining) {
    ModelConfig c = tiny();
    c.depth = 4;
    const Network<float> net(c, 0);
    Tape<float> t(false);
    const Var x = t.leaf(Tensor<float>({2, 16, 16}, 0.5f));
    EXPECT_EQ(net.forward(t, x, Mode::Inference).aux_logits.size(), 0u);
    const auto r = net.forward(t, x, Mode::Train);
    ASSERT_EQ(r.aux_logits.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.value(r.aux_logits[i]).dim(1), 16u >> (i + 1));
    c.aux_heads = false;
    EXPECT_EQ(Network<float>(c, 0).forward(t, x, Mode::Train).aux_logits.size(), 0u);
}

TEST(Network, CenterSliceHeadWidth) {
    ModelConfig c = tiny();
    c.slab = 3;
    c.slab_out = SlabOut::CenterSlice;
    const Network<float> net(c, 0);
    Tape<float> t(false);
    const auto r = net.forward(t, t.leaf(Tensor<float>({3, 8, 8})), Mode::Inference);
    EXPECT_EQ(t.value(r.logits).dim(0), 11u);
}

TEST(Network, InputShapeErrors) {
    const Network<float> net(tiny(), 0);
    Tape<float> t(false);
    EXPECT_THROW((void)net.forward(t, t.leaf(Tensor<float>({3, 8, 8})), Mode::Inference), ShapeError);
    EXPECT_THROW((void)net.forward(t, t.leaf(Tensor<float>({2, 6, 8})), Mode::Inference), ShapeError);
}

TEST(Network, RunningStatsRequireUpdates) {
    ModelConfig c = tiny(Arch::Dense, NormMode::BN);
    c.bn_inference = BnInference::RunningStats;
    Network<float> net(c, 0);
    Rng rng(6);
    Tensor<float> x({2, 8, 8});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());
    {
        Tape<float> t(false);
        EXPECT_THROW((void)net.forward(t, t.leaf(x), Mode::Inference), Error);
    }
    Tape<float> t(false);
    const auto r = net.forward(t, t.leaf(x), Mode::Train);
    net.update_running_stats(r.bn_stats);
    EXPECT_TRUE(net.running_stats_initialized());
    Tape<float> t2(false);
    EXPECT_NO_THROW((void)net.forward(t2, t2.leaf(x), Mode::Inference));
}

TEST(Gradients, ZeroUpstreamGivesZero) {
    const Network<double> net(tiny(), 1);
    Rng rng(7);
    Tape<double> t(true);
    const auto r = net.forward(t, t.leaf(random_tensor({2, 8, 8}, rng)), Mode::Train);
    t.backward(r.logits, Tensor<double>(t.value(r.logits).shape()));
    for (const auto& [name, g] : collect_gradients(t, r)) {
        for (double v : g.values()) ASSERT_EQ(v, 0.0) << name;
    }
}

TEST(Gradients, BiasOfSumLossCountsPositions) {
    Rng rng(8);
    Tape<double> t(true);
    const Var x = t.leaf(random_tensor({2, 5, 7}, rng));
    const Var w = t.leaf(random_tensor({3, 2, 3, 3}, rng), true);
    const Var b = t.leaf(Tensor<double>({3}), true);
    const Var y = conv2d(t, x, w, b, 1, 1);
    const Var loss = weighted_sum(t, y, Tensor<double>(t.value(y).shape(), 1.0));
    t.backward(loss);
    const Tensor<double> gb = t.grad(b);
    for (double g : gb.values()) EXPECT_DOUBLE_EQ(g, 35.0);
}

TEST(ParamCount, SingleConv) {
    // Smallest network unit: a 3x3 conv 1 -> 1 with bias.
    Tensor<double> w({1, 1, 3, 3});
    Tensor<double> b({1});
    EXPECT_EQ(w.size() + b.size(), 10u);
}

TEST(ParamCount, MatchesClosedForm) {
    for (Arch arch : {Arch::Dense, Arch::Plain})
        for (NormMode norm : {NormMode::None, NormMode::BN})
            for (std::size_t depth : {1u, 2u, 4u})
                for (std::size_t L : {1u, 2u, 4u})
                    for (bool aux : {true, false}) {
                        ModelConfig c;
                        c.arch = arch;
                        c.norm = norm;
                        c.depth = depth;
                        c.layers_per_block = L;
                        c.aux_heads = aux;
                        c.k = 6;
                        c.f = 8;
                        c.slab = 5;
                        EXPECT_EQ(count_params(c), oracle::closed_form_params(c));
                        EXPECT_EQ(Network<float>(c, 0).parameter_count(), count_params(c));
                    }
}

TEST(ParamCount, DenseIsSmallerAndMonotone) {
    ModelConfig plain;
    plain.arch = Arch::Plain;
    for (std::size_t k = 1; k <= 64; k += 9) {
        ModelConfig dense;
        dense.k = k;
        EXPECT_LT(count_params(dense), count_params(plain)) << "k=" << k;
    }
    ModelConfig d;
    const std::size_t base = count_params(d);
    d.layers_per_block *= 2;
    EXPECT_GT(count_params(d), base);
}

TEST(ModelConfigTest, ValidateAndJson) {
    ModelConfig c;
    EXPECT_TRUE(c.validate().empty());
    c.class_count = 5;
    c.depth = 0;
    EXPECT_EQ(c.validate().size(), 2u);
    ModelConfig d = tiny(Arch::Plain, NormMode::LN);
    d.slab_out = SlabOut::CenterSlice;
    EXPECT_EQ(nlohmann::json(d).get<ModelConfig>(), d);
    nlohmann::json bad = d;
    bad["norm"] = "group";
    EXPECT_THROW((void)bad.get<ModelConfig>(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    ModelConfig c = tiny(Arch::Dense, NormMode::BN);
    Network<float> net(c, 9);
    Checkpoint ckp = make_checkpoint(net);
    ckp.adam_t = 17;
    for (const auto& [name, p] : ckp.parameters) {
        ckp.adam_m[name] = Tensor<float>(p.shape(), 0.25f);
        ckp.adam_v[name] = Tensor<float>(p.shape(), 0.5f);
    }
    std::stringstream ss;
    write_checkpoint(ss, ckp);
    const std::string bytes = ss.str();
    const Checkpoint back = read_checkpoint(ss);
    EXPECT_EQ(back, ckp);
    std::stringstream again;
    write_checkpoint(again, back);
    EXPECT_EQ(again.str(), bytes);
    const Network<float> restored = restore_network(back);
    EXPECT_EQ(restored.parameters(), net.parameters());
    EXPECT_EQ(restored.buffers(), net.buffers());
}

TEST(Checkpoint, CorruptionIsDetected) {
    const Checkpoint ckp = make_checkpoint(Network<float>(tiny(), 0));
    std::stringstream ss;
    write_checkpoint(ss, ckp);
    std::string bytes = ss.str();
    {
        std::stringstream bad(bytes.substr(0, bytes.size() / 2));
        EXPECT_THROW((void)read_checkpoint(bad), IoError);
    }
    {
        std::string b = bytes;
        b[0] = 'X';
        std::stringstream bad(b);
        EXPECT_THROW((void)read_checkpoint(bad), IoError);
    }
    Checkpoint wrong = ckp;
    wrong.parameters.erase(wrong.parameters.begin());
    EXPECT_THROW((void)restore_network(wrong), ConfigError);
    wrong = ckp;
    wrong.parameters.begin()->second = Tensor<float>({1});
    EXPECT_THROW((void)restore_network(wrong), ConfigError);
}
