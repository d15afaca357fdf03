#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <utility>
#include <vector>

#include "alamo/nn/ops.hpp"

namespace alamo::nn {

enum class Arch { Dense, Plain };
enum class NormMode { None, BN, IN, LN };
enum class BnInference { TrainStats, RunningStats };
enum class SlabOut { AllSlices, CenterSlice };
enum class Mode { Train, Inference };

struct ModelConfig {
    Arch arch = Arch::Dense;
    std::size_t k = 48;  // growth rate (Dense)
    std::size_t f = 64;  // first-level filter count (Plain)
    std::size_t depth = 4;
    std::size_t layers_per_block = 4;
    std::size_t slab = 20;
    std::size_t class_count = 11;
    NormMode norm = NormMode::None;
    BnInference bn_inference = BnInference::TrainStats;
    bool aux_heads = true;
    SlabOut slab_out = SlabOut::AllSlices;

    /// Every problem found, empty when valid.
    [[nodiscard]] std::vector<std::string> validate() const;
    /// Channels of the final 1x1 head: class_count * slab, or class_count for CenterSlice.
    [[nodiscard]] std::size_t out_channels() const;
    /// Number of slices each output group covers (slab, or 1 for CenterSlice).
    [[nodiscard]] std::size_t out_slices() const { return slab_out == SlabOut::AllSlices ? slab : 1; }
    /// H and W of the input must be multiples of this.
    [[nodiscard]] std::size_t spatial_multiple() const { return std::size_t{1} << depth; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class InitKind { HeUniform, Zero, One };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init = InitKind::Zero;
    std::size_t fan_in = 1;
};

/// Every learned tensor of the architecture, in construction order.
[[nodiscard]] std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);
/// Names and channel counts of the batch-norm running-statistic buffers.
[[nodiscard]] std::vector<std::pair<std::string, std::size_t>> batchnorm_layout(const ModelConfig& cfg);
[[nodiscard]] std::size_t count_params(const ModelConfig& cfg);

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <typename T>
struct ForwardResult {
    Var logits;                   // [out_channels][H][W]
    Var probs;                    // softmax per class group
    std::vector<Var> aux_logits;  // aux_logits[i] at 1 / 2^(i+1) resolution
    std::vector<std::pair<std::string, NormStats<T>>> bn_stats;  // observed batch statistics (Train mode)
    std::map<std::string, Var> params;
};

/// U-shaped network with dense or plain blocks over a multi-slice input.
template <typename T>
class Network {
public:
    explicit Network(ModelConfig cfg, std::uint64_t init_seed = 0);

    [[nodiscard]] const ModelConfig& config() const { return cfg_; }
    [[nodiscard]] TensorMap<T>& parameters() { return params_; }
    [[nodiscard]] const TensorMap<T>& parameters() const { return params_; }
    /// Batch-norm running statistics plus the "bn/updates" counter.
    [[nodiscard]] TensorMap<T>& buffers() { return buffers_; }
    [[nodiscard]] const TensorMap<T>& buffers() const { return buffers_; }
    [[nodiscard]] std::size_t parameter_count() const;

    [[nodiscard]] bool running_stats_initialized() const;
    /// running = momentum * running + (1 - momentum) * batch, for every observed layer.
    void update_running_stats(const std::vector<std::pair<std::string, NormStats<T>>>& stats, double momentum = 0.9);

    /// Input is a [S][H][W] slab. Inference mode omits auxiliary heads and
    /// applies the configured batch-norm inference statistics. The network is
    /// not modified; all pass state lives on `tape`.
    ForwardResult<T> forward(Tape<T>& tape, Var input, Mode mode) const;

private:
    ModelConfig cfg_;
    TensorMap<T> params_;
    TensorMap<T> buffers_;
};

/// Parameter gradients after tape.backward().
template <typename T>
[[nodiscard]] TensorMap<T> collect_gradients(const Tape<T>& tape, const ForwardResult<T>& result);

/// Copies parameters (and buffers) between precisions.
template <typename To, typename From>
[[nodiscard]] Network<To> convert_network(const Network<From>& net);

[[nodiscard]] std::string to_string(Arch a);
[[nodiscard]] std::string to_string(NormMode m);

}  // namespace alamo::nn
