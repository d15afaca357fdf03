#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "alamo/nn/ops.hpp"

namespace alamo::verify {

struct CheckResult {
    std::string suite;
    std::string name;
    bool passed = false;
    double value = 0.0;      // max relative error, max abs deviation, ... per check
    double tolerance = 0.0;
    std::size_t samples = 0;
    std::string detail;
};

struct Report {
    std::vector<CheckResult> checks;

    [[nodiscard]] bool passed() const;
    void append(const Report& other);
    /// One line per check: PASS/FAIL, suite/name, value vs tolerance, samples.
    void print(std::ostream& os) const;
};

/// Convolution op used by the layer-level gradient cases; replaceable so a
/// deliberately broken backward can be shown to fail.
using ConvOp = std::function<nn::Var(nn::Tape<double>&, nn::Var x, nn::Var w, nn::Var b, std::size_t stride,
                                     std::size_t pad)>;

struct GradcheckOptions {
    std::uint64_t seed = 0;
    double h = 1e-5;
    double tolerance = 1e-4;
    std::size_t samples = 50;
    ConvOp conv;  // empty: nn::conv2d
};

/// Central finite differences vs reverse mode over every layer type, the
/// normalization modes, dense and plain blocks and a tiny assembled network.
[[nodiscard]] Report gradcheck_suite(const GradcheckOptions& opt = {});

/// Metric implementations vs counting and all-pairs brute-force oracles.
[[nodiscard]] Report metrics_suite(std::uint64_t seed = 0, std::size_t pairs = 200);

/// Fusion properties: unanimity, permutation invariance, tie-breaks, region recovery.
[[nodiscard]] Report fusion_suite(std::uint64_t seed = 0);

/// Relative error used by the gradient checks: |a - n| / max(|a|, |n|, floor).
[[nodiscard]] double relative_error(double analytic, double numeric, double floor = 1e-5);

}  // namespace alamo::verify
