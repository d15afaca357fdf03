#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "alamo/augment.hpp"
#include "alamo/dataset.hpp"
#include "alamo/nn/checkpoint.hpp"
#include "alamo/nn/model.hpp"

namespace alamo::train {

using ViewCycle = std::array<ViewAxis, 6>;

inline constexpr ViewCycle kDefaultViewCycle{ViewAxis::Transversal, ViewAxis::Transversal, ViewAxis::Transversal,
                                             ViewAxis::Transversal, ViewAxis::Coronal,     ViewAxis::Sagittal};

struct TrainConfig {
    double lr0 = 1e-4;
    double decay = 0.9;
    std::uint64_t decay_every = 50000;
    std::uint64_t max_steps = 2000;
    double aux_weight = 0.25;
    ViewCycle view_cycle = kDefaultViewCycle;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_every = 500;  // 0 disables periodic checkpoints
    double target_spacing_mm = 1.2;

    [[nodiscard]] std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// The complete training configuration file: {"model": ..., "train": ..., "augment": ...}.
struct RunConfig {
    nn::ModelConfig model;
    TrainConfig train;
    augment::AugmentConfig augment;

    /// All problems across the three blocks, including cross-block consistency.
    [[nodiscard]] std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// lr0 * decay^floor(step / decay_every).
[[nodiscard]] double lr_at(const TrainConfig& cfg, std::uint64_t step);

struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    nn::TensorMap<float> m;
    nn::TensorMap<float> v;
    std::uint64_t t = 0;
};

/// Zero moments shaped like `params`.
[[nodiscard]] AdamState make_adam_state(const nn::TensorMap<float>& params);

/// One bias-corrected Adam update. Throws NumericError (without touching
/// params or state) if any gradient is non-finite.
template <typename T>
void adam_step(nn::TensorMap<T>& params, const nn::TensorMap<T>& grads, nn::TensorMap<T>& m, nn::TensorMap<T>& v,
               std::uint64_t& t, double lr);
void adam_step(nn::TensorMap<float>& params, const nn::TensorMap<float>& grads, AdamState& state, double lr);

/// Nearest-neighbor downsampling of a [S][H][W] label stack by `factor` in H and W.
[[nodiscard]] Grid3<ClassId> downsample_labels(const Grid3<ClassId>& labels, std::size_t factor);

/// Label slices the main head is trained against: all S, or the center slice.
[[nodiscard]] Grid3<ClassId> target_slices(const Grid3<ClassId>& labels, const nn::ModelConfig& cfg);

struct LossTerms {
    double total = 0.0;
    double main = 0.0;
    std::vector<double> aux;
};

/// L = CE_main + aux_weight * sum_i CE_aux_i on the tape.
template <typename T>
nn::Var slab_loss(nn::Tape<T>& tape, const nn::ForwardResult<T>& fwd, const Grid3<ClassId>& labels,
                  const nn::ModelConfig& cfg, double aux_weight, LossTerms* terms = nullptr);

/// Reads the [S][H][W] image stack into a tensor.
[[nodiscard]] nn::Tensor<float> slab_tensor(const Grid3<float>& image);

/// Standardize then resample to isotropic spacing (nearest for labels).
[[nodiscard]] Case prepare_case(const Case& c, double target_spacing_mm);

struct LossRecord {
    std::uint64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_loss;

    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// CSV `step,lr,train_loss,val_loss` (val_loss empty when not evaluated).
void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& trace);
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

struct TrainHooks {
    /// Called after every checkpoint_every steps with the state after that step.
    std::function<void(std::uint64_t steps_done, const nn::Checkpoint&)> on_checkpoint;
    std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
    nn::Checkpoint checkpoint;  // final state, including optimizer
    std::vector<LossRecord> trace;
};

/// Mean main cross-entropy (inference mode) on the central transversal slab of each case.
[[nodiscard]] double validation_loss(const nn::Network<float>& net, const std::vector<Case>& cases);

/// Single-context training. Every step s draws from its own stream
/// Rng::derive(seed, s), so resuming from a checkpoint after n steps
/// continues the identical sequence. `train_cases` must already be prepared.
[[nodiscard]] TrainResult train_loop(const std::vector<Case>& train_cases, const std::vector<Case>& val_cases,
                                     const RunConfig& cfg, const nn::Checkpoint* resume = nullptr,
                                     const TrainHooks& hooks = {});

}  // namespace alamo::train
