#pragma once

#include <array>
#include <cstddef>
#include <nlohmann/json_fwd.hpp>

#include "alamo/rng.hpp"
#include "alamo/volume.hpp"

namespace alamo::augment {

/// S contiguous slices of one view, cropped from a resliced volume.
struct Slab {
    Grid3<float> image;     // [S][H][W]
    Grid3<ClassId> labels;  // [S][H][W]
    ViewAxis view = ViewAxis::Transversal;
    /// Index of element (0, 0, 0) in the resliced, unpadded frame (may be negative when padded).
    std::array<std::ptrdiff_t, 3> origin{};

    [[nodiscard]] const Dims3& dims() const { return image.dims(); }
};

/// Closed ranges of the projective deformation parameters.
struct DeformLimits {
    double rotation_max = 0.05;
    double shear_max = 0.3;
    double projective_max = 0.003;
};

struct DeformParams {
    double rotation = 0.0;
    double shear = 0.0;
    double projective = 0.0;
    bool apply = false;

    /// Throws std::invalid_argument if any parameter is outside `limits`.
    void validate(const DeformLimits& limits = {}) const;
};

/// Augmentation settings block of the training config.
struct AugmentConfig {
    double flip_p = 0.5;
    double deform_p = 0.5;
    DeformLimits limits;
    std::array<std::size_t, 3> slab{20, 256, 160};  // S, H, W
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// Reslices `v`/`labels` to `view`, zero-pads H/W symmetrically up to the crop
/// size when needed, then draws uniform start indices.
[[nodiscard]] Slab crop_slab(const Volume& v, const LabelMap& labels, ViewAxis view, std::size_t S,
                             std::size_t H, std::size_t W, Rng& rng);

struct FlipChoice {
    bool up_down = false;
    bool left_right = false;
};

[[nodiscard]] FlipChoice draw_flip(Rng& rng, double p);
/// In-plane flips of image and labels; the slice axis is never flipped.
[[nodiscard]] Slab apply_flip(const Slab& s, FlipChoice choice);
[[nodiscard]] Slab random_flip(const Slab& s, double p, Rng& rng);

/// Row-major 3x3 homography on homogeneous (x, y, 1) in slice-centered coordinates.
using Homography = std::array<double, 9>;

/// H = P * Sh * R.
[[nodiscard]] Homography homography(const DeformParams& params);

/// Applies the same homography to every slice: bilinear for the image,
/// nearest-neighbor for labels, zero / background outside the field.
[[nodiscard]] Slab projective_deform(const Slab& s, const DeformParams& params);

[[nodiscard]] DeformParams draw_params(Rng& rng, double p_apply, const DeformLimits& limits = {});

/// Flip followed by projective deformation, both drawn from `rng`.
[[nodiscard]] Slab augment(const Slab& s, const AugmentConfig& cfg, Rng& rng);

}  // namespace alamo::augment
