#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "alamo/nn/checkpoint.hpp"
#include "alamo/phantom.hpp"
#include "alamo/train.hpp"

using namespace alamo;
using namespace alamo::train;
using nn::Tensor;
using nn::TensorMap;

namespace {

RunConfig small_run(std::uint64_t steps) {
    RunConfig c;
    c.model.k = 2;
    c.model.depth = 2;
    c.model.layers_per_block = 1;
    c.model.slab = 2;
    c.augment.slab = {2, 16, 16};
    c.train.max_steps = steps;
    c.train.checkpoint_every = 0;
    c.train.lr0 = 1e-3;
    return c;
}

std::vector<Case> small_cases(std::size_t n) {
    std::vector<Case> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto [v, l] = phantom::generate(phantom::default_spec({8, 16, 16}, 3, i));
        out.push_back(prepare_case(Case{"c" + std::to_string(i), v, l}, 1.2));
    }
    return out;
}

}  // namespace

TEST(Schedule, PublishedValuesExactly) {
    const TrainConfig c;
    EXPECT_EQ(lr_at(c, 0), 1e-4);
    EXPECT_EQ(lr_at(c, 49999), 1e-4);
    EXPECT_EQ(lr_at(c, 50000), 9e-5);
    EXPECT_EQ(lr_at(c, 149999), 8.1e-5);
}

TEST(Adam, ClosedFormFirstStep) {
    TensorMap<double> p{{"a", Tensor<double>({1}, 0.0)}};
    TensorMap<double> g{{"a", Tensor<double>({1}, 1.0)}};
    TensorMap<double> m{{"a", Tensor<double>({1})}}, v{{"a", Tensor<double>({1})}};
    std::uint64_t t = 0;
    adam_step(p, g, m, v, t, 0.1);
    EXPECT_EQ(t, 1u);
    // m_hat = v_hat = 1, so theta = -lr / (1 + eps).
    EXPECT_NEAR(p["a"][0], -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, FirstStepIsSignScaled) {
    TensorMap<double> p{{"a", Tensor<double>({2}, 0.0)}};
    TensorMap<double> g{{"a", Tensor<double>({2}, std::vector<double>{0.3, -0.6})}};
    TensorMap<double> m{{"a", Tensor<double>({2})}}, v{{"a", Tensor<double>({2})}};
    std::uint64_t t = 0;
    adam_step(p, g, m, v, t, 0.01);
    EXPECT_NEAR(p["a"][0], -0.01, 1e-9);
    EXPECT_NEAR(p["a"][1], 0.01, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParams) {
    TensorMap<float> p{{"a", Tensor<float>({3}, 1.5f)}};
    TensorMap<float> g{{"a", Tensor<float>({3})}};
    AdamState s = make_adam_state(p);
    adam_step(p, g, s, 0.1);
    EXPECT_EQ(p["a"], Tensor<float>({3}, 1.5f));
    EXPECT_EQ(s.t, 1u);
}

TEST(Adam, NonFiniteGradientThrowsWithoutUpdate) {
    TensorMap<float> p{{"a", Tensor<float>({2}, 1.0f)}};
    TensorMap<float> g{{"a", Tensor<float>({2}, std::vector<float>{0.5f, NAN})}};
    AdamState s = make_adam_state(p);
    EXPECT_THROW(adam_step(p, g, s, 0.1), NumericError);
    EXPECT_EQ(p["a"], Tensor<float>({2}, 1.0f));
    EXPECT_EQ(s.t, 0u);
}

TEST(Loss, AuxWeightZeroIsMainCe) {
    nn::ModelConfig c = small_run(0).model;
    const nn::Network<double> net(c, 1);
    Grid3<ClassId> labels({2, 8, 8});
    for (std::size_t i = 0; i < labels.size(); ++i) labels.storage()[i] = static_cast<ClassId>(i % 4);
    nn::Tape<double> t(false);
    Tensor<double> x({2, 8, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<double>(i));
    const auto fwd = net.forward(t, t.leaf(x), nn::Mode::Train);
    LossTerms with, without;
    (void)slab_loss(t, fwd, labels, c, 0.25, &with);
    (void)slab_loss(t, fwd, labels, c, 0.0, &without);
    EXPECT_EQ(without.total, without.main);
    EXPECT_EQ(with.main, without.main);
    ASSERT_EQ(with.aux.size(), 1u);
    EXPECT_NEAR(with.total, with.main + 0.25 * with.aux[0], 1e-12);
}

TEST(Loss, DownsampleAndCenterTargets) {
    Grid3<ClassId> l({3, 4, 4});
    for (std::size_t i = 0; i < l.size(); ++i) l.storage()[i] = static_cast<ClassId>(i % 11);
    const auto d = downsample_labels(l, 2);
    EXPECT_EQ(d.dims(), (Dims3{3, 2, 2}));
    EXPECT_EQ(d(1, 1, 0), l(1, 3, 1));
    EXPECT_THROW((void)downsample_labels(l, 3), ShapeError);
    nn::ModelConfig c;
    c.slab = 3;
    c.slab_out = nn::SlabOut::CenterSlice;
    const auto t = target_slices(l, c);
    EXPECT_EQ(t.dims(), (Dims3{1, 4, 4}));
    EXPECT_EQ(t(0, 2, 3), l(1, 2, 3));
}

TEST(Config, JsonRoundTripAndUnknownBlock) {
    RunConfig c = small_run(10);
    c.train.view_cycle = {ViewAxis::Sagittal, ViewAxis::Coronal, ViewAxis::Transversal,
                          ViewAxis::Transversal, ViewAxis::Coronal, ViewAxis::Sagittal};
    const RunConfig back = nlohmann::json(c).get<RunConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
    EXPECT_THROW((void)nlohmann::json::parse(R"({"optimizer": {}})").get<RunConfig>(), ConfigError);
}

TEST(Config, ValidateCollectsEveryProblem) {
    RunConfig c;
    EXPECT_TRUE(c.validate().empty());
    c.train.lr0 = -1;
    c.augment.slab = {5, 250, 160};  // slab mismatch and H not a multiple of 16
    EXPECT_GE(c.validate().size(), 3u);
}

TEST(Loop, ZeroStepsReturnsInitialization) {
    const RunConfig c = small_run(0);
    const auto res = train_loop(small_cases(1), {}, c);
    EXPECT_TRUE(res.trace.empty());
    EXPECT_EQ(res.checkpoint.parameters, nn::make_checkpoint(nn::Network<float>(c.model, c.train.seed)).parameters);
}

TEST(Loop, SameSeedSameTrace) {
    const auto cases = small_cases(2);
    const RunConfig c = small_run(12);
    const auto a = train_loop(cases, {}, c);
    const auto b = train_loop(cases, {}, c);
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.checkpoint, b.checkpoint);
    RunConfig d = c;
    d.train.seed = 1;
    EXPECT_NE(train_loop(cases, {}, d).trace, a.trace);
}

TEST(Loop, ResumeContinuesTrace) {
    const auto cases = small_cases(2);
    RunConfig c = small_run(16);
    c.model.norm = nn::NormMode::BN;
    c.train.checkpoint_every = 8;
    nn::Checkpoint mid;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](std::uint64_t steps, const nn::Checkpoint& ck) {
        if (steps == 8) mid = ck;
    };
    const auto full = train_loop(cases, cases, c, nullptr, hooks);
    const auto resumed = train_loop(cases, cases, c, &mid);
    ASSERT_EQ(resumed.trace.size(), 8u);
    EXPECT_TRUE(std::equal(resumed.trace.begin(), resumed.trace.end(), full.trace.begin() + 8));
    EXPECT_EQ(resumed.checkpoint, full.checkpoint);
}

TEST(Loop, ResumeWithDifferentModelRejected) {
    const auto cases = small_cases(1);
    const auto res = train_loop(cases, {}, small_run(1));
    RunConfig other = small_run(2);
    other.model.k = 3;
    EXPECT_THROW((void)train_loop(cases, {}, other, &res.checkpoint), ConfigError);
}

TEST(Loop, ValidationLossAtCheckpoints) {
    const auto cases = small_cases(2);
    RunConfig c = small_run(6);
    c.train.checkpoint_every = 3;
    const auto res = train_loop(cases, cases, c);
    for (const auto& r : res.trace) EXPECT_EQ(r.val_loss.has_value(), (r.step + 1) % 3 == 0);
}

TEST(LossCsv, Format) {
    std::ostringstream os;
    write_loss_csv(os, {{0, 1e-4, 2.5, std::nullopt}, {1, 1e-4, 0.1, 0.2}});
    EXPECT_EQ(os.str(), "step,lr,train_loss,val_loss\n0,0.0001,2.5,\n1,0.0001,0.10000000000000001,0.20000000000000001\n");
}
