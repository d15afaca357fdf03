#include <gtest/gtest.h>

#include <sstream>

#include "alamo/verify.hpp"

using namespace alamo;
using namespace alamo::verify;

namespace {

/// conv2d whose weight gradient is scaled by 1.01: a subtly broken backward.
nn::Var broken_conv(nn::Tape<double>& t, nn::Var x, nn::Var w, nn::Var b, std::size_t stride, std::size_t pad) {
    const auto y = nn::kernels::conv2d_forward(t.value(x), t.value(w), t.value(b), stride, pad);
    return t.push(y, {x, w, b}, [x, w, b, stride, pad](nn::Tape<double>& tape, const nn::Tensor<double>& g) {
        nn::Tensor<double>* gw = tape.grad_sink(w);
        nn::Tensor<double> scratch(tape.value(w).shape());
        nn::kernels::conv2d_backward(tape.value(x), tape.value(w), g, stride, pad, tape.grad_sink(x), &scratch,
                                     tape.grad_sink(b));
        if (gw) {
            for (std::size_t i = 0; i < scratch.size(); ++i) (*gw)[i] += 1.01 * scratch[i];
        }
    });
}

}  // namespace

TEST(Verify, GradcheckPassesOnCorrectBuild) {
    const Report r = gradcheck_suite();
    for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << " " << c.value << " " << c.detail;
    EXPECT_GE(r.checks.size(), 14u);
}

TEST(Verify, PerturbedConvBackwardFails) {
    GradcheckOptions opt;
    opt.conv = broken_conv;
    const Report r = gradcheck_suite(opt);
    EXPECT_FALSE(r.passed());
    for (const auto& c : r.checks) {
        if (c.name.rfind("conv2d", 0) == 0) EXPECT_FALSE(c.passed) << c.name;
    }
}

TEST(Verify, ReportListsErrorPerCheck) {
    const Report r = gradcheck_suite();
    std::ostringstream os;
    r.print(os);
    for (const auto& c : r.checks) EXPECT_NE(os.str().find(c.name), std::string::npos);
    EXPECT_NE(os.str().find("value="), std::string::npos);
}

TEST(Verify, MetricsAndFusionSuitesPass) {
    for (const Report& r : {metrics_suite(1, 50), fusion_suite(1)}) {
        for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.suite << "/" << c.name << " " << c.detail;
    }
}

TEST(Verify, RelativeErrorFloor) {
    EXPECT_NEAR(relative_error(1.0, 1.0001), 1e-4 / 1.0001, 1e-15);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-5);
}
