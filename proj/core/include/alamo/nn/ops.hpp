#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "alamo/nn/tape.hpp"

namespace alamo::nn {

/// Raw forward/backward kernels on rank-3 [C][H][W] tensors. The tape ops
/// below are thin wrappers; the kernels are exposed for benchmarks and tests.
namespace kernels {

/// Cross-correlation. weights [Cout][Cin][kh][kw], bias [Cout] (may be empty).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                         std::size_t pad);
/// Accumulates into the non-null gradient outputs.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, std::size_t stride,
                     std::size_t pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb);

/// Transposed convolution, 2x2 kernel, stride 2. weights [Cin][Cout][2][2].
template <typename T>
Tensor<T> conv_transpose2_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void conv_transpose2_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx,
                              Tensor<T>* gw, Tensor<T>* gb);

template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x);
/// Nearest-neighbor 2x upsampling (the adjoint shape of avg_pool2).
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x);

}  // namespace kernels

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride = 1, std::size_t pad = 1);

template <typename T>
Var conv_transpose2(Tape<T>& tape, Var x, Var w, Var b);

/// ELU with alpha = 1.
template <typename T>
Var elu(Tape<T>& tape, Var x);

/// 2x2 average pooling; H and W must be even.
template <typename T>
Var avg_pool2(Tape<T>& tape, Var x);

/// Concatenation along the channel axis (axis 0).
template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs);

/// Softmax over consecutive groups of `group` channels at every pixel.
template <typename T>
Var softmax_groups(Tape<T>& tape, Var logits, std::size_t group);

/// Mean cross-entropy of grouped logits [G*group][H][W] against labels
/// [G][H][W] (row-major, values < group). Uses a stable log-softmax.
template <typename T>
Var cross_entropy_groups(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels, std::size_t group);

/// Normalization statistics scope.
enum class StatScope {
    PerChannel,  // mean/var over H*W for each channel (instance norm, batch norm with batch size 1)
    PerSample,   // mean/var over C*H*W (layer norm)
};

template <typename T>
struct NormStats {
    std::vector<double> mean;  // per channel (PerSample: replicated)
    std::vector<double> var;   // population variance
};

/// y = (x - mean) / sqrt(var + eps) * scale[c] + shift[c] with statistics of x.
/// Optionally reports the statistics used.
template <typename T>
Var normalize_batch(Tape<T>& tape, Var x, Var scale, Var shift, StatScope scope, double eps,
                    NormStats<T>* stats_out = nullptr);

/// Same affine normalization with fixed per-channel statistics (inference-mode batch norm).
template <typename T>
Var normalize_fixed(Tape<T>& tape, Var x, Var scale, Var shift, std::span<const T> mean, std::span<const T> var,
                    double eps);

/// Scalar sum(x * weights) for arbitrary-shape x; used as a probe loss.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

/// Scalar sum_i coeffs[i] * xs[i] over scalar inputs.
template <typename T>
Var linear_combination(Tape<T>& tape, const std::vector<Var>& xs, const std::vector<T>& coeffs);

}  // namespace alamo::nn
