#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "alamo/nn/model.hpp"
#include "alamo/volume.hpp"

namespace alamo::infer {

/// First slice of every slab covering `n` slices: 0, stride, 2*stride, ...
/// with the final slab aligned to the last slice. Requires n >= S.
[[nodiscard]] std::vector<std::size_t> slab_starts(std::size_t n, std::size_t S, std::size_t stride);

/// Per-view probability map in the transversal frame. `v` must be
/// standardized and isotropic. stride 0 means stride = S (non-overlapping).
[[nodiscard]] ProbMap predict_view(const nn::Network<float>& net, const Volume& v, ViewAxis view,
                                   std::size_t stride = 0);

/// Per-voxel majority of the three argmax votes; a three-way split goes to the
/// voted class with the largest summed probability, then the lowest id.
[[nodiscard]] LabelMap fuse_majority(const ProbMap& p_t, const ProbMap& p_c, const ProbMap& p_s);

/// Argmax of the summed probabilities (lowest id on ties).
[[nodiscard]] LabelMap fuse_soft(const ProbMap& p_t, const ProbMap& p_c, const ProbMap& p_s);

enum class FuseMode { Vote, Soft, Single };

struct FuseSpec {
    FuseMode mode = FuseMode::Vote;
    ViewAxis single = ViewAxis::Transversal;  // used by FuseMode::Single
};

/// "vote", "soft" or "single:<view>".
[[nodiscard]] FuseSpec parse_fuse(std::string_view s);
[[nodiscard]] std::string to_string(const FuseSpec& f);

struct PredictOptions {
    std::vector<ViewAxis> views{ViewAxis::Transversal, ViewAxis::Coronal, ViewAxis::Sagittal};
    FuseSpec fuse;
    double target_spacing_mm = 1.2;
    std::size_t stride = 0;
    /// Concurrent views; 0 reads ALAMO_THREADS (0 or unset = hardware concurrency).
    unsigned threads = 0;
    bool keep_probs = false;

    /// Throws std::invalid_argument for inconsistent view / fusion choices.
    void validate() const;
};

struct Prediction {
    LabelMap labels;                      // on the input grid
    std::map<ViewAxis, double> seconds;   // wall time per view
    std::map<ViewAxis, ProbMap> probs;    // on the isotropic grid, when keep_probs
};

/// Worker cap from ALAMO_THREADS, at least 1.
[[nodiscard]] unsigned thread_limit(unsigned requested = 0);

/// standardize -> isotropic resample -> per-view prediction (concurrent) ->
/// fusion -> nearest-neighbor resample back to the input grid.
[[nodiscard]] Prediction predict_full(const nn::Network<float>& net, const Volume& v, const PredictOptions& opt = {});

}  // namespace alamo::infer
