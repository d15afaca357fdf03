#pragma once

// Independent reference implementations used only by the tests.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alamo/metrics.hpp"
#include "alamo/nn/model.hpp"
#include "alamo/volume.hpp"

namespace alamo::oracle {

/// Six nested loops over (cout, y, x, cin, ky, kx) with zero padding.
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                               const std::vector<double>& k, std::size_t cout, std::size_t ks,
                               const std::vector<double>& bias, std::size_t stride, std::size_t pad);

/// Parameter count of the U-network summed layer by layer from the channel algebra.
std::size_t closed_form_params(const nn::ModelConfig& cfg);

/// Voxel counts of a, b and their intersection.
struct Overlap {
    std::size_t a = 0, b = 0, both = 0;
};
Overlap overlap(const metrics::Mask& a, const metrics::Mask& b);

/// Foreground voxels with any face neighbor outside the mask, in mm.
std::vector<metrics::Point> surface_points(const metrics::Mask& m, Spacing s);

/// Nearest-surface distances both ways by scanning all pairs, sorted.
std::vector<double> all_pairs_distances(const metrics::Mask& a, const metrics::Mask& b, Spacing s);

/// Two-sided Wilcoxon p-value by enumerating all 2^n sign assignments (n <= 20).
double wilcoxon_enumerated(std::span<const double> a, std::span<const double> b);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace alamo::oracle
