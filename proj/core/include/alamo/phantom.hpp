#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <utility>
#include <vector>

#include "alamo/volume.hpp"

namespace alamo::phantom {

enum class ShapeKind { Ellipsoid, Tube };

/// One organ. Coordinates are voxel indices (z, y, x).
///
/// Ellipsoid: semi-axes `radii`, rotated by `angle` radians in the y-x plane.
/// Tube: capsule around the segment `center` -> `end` with radius `radii[0]`.
struct Shape {
    ShapeKind kind = ShapeKind::Ellipsoid;
    ClassId class_id = 1;
    std::array<double, 3> center{};
    std::array<double, 3> radii{1.0, 1.0, 1.0};
    double angle = 0.0;
    std::array<double, 3> end{};

    [[nodiscard]] bool contains(double z, double y, double x) const;
};

struct PhantomSpec {
    Dims3 dims{32, 64, 64};
    Spacing spacing{1.2, 1.2, 1.2};
    std::uint64_t seed = 0;
    std::vector<Shape> shapes;  // later shapes win on overlap
    std::array<double, kClassCount> intensity_mean{};
    double noise_sigma = 0.0;
    double bias_amplitude = 0.0;

    [[nodiscard]] std::size_t organ_count() const { return shapes.size(); }
    /// Throws ConfigError on duplicate class ids, bad radii or shapes outside the grid.
    void validate() const;
};

/// Abdomen-like layout with the first `organ_count` organs of the class table,
/// positions jittered by `seed`.
[[nodiscard]] PhantomSpec default_spec(Dims3 dims, int organ_count, std::uint64_t seed,
                                       double noise_sigma = 0.05, double bias_amplitude = 0.1);

[[nodiscard]] std::pair<Volume, LabelMap> generate(const PhantomSpec& spec);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Partition of 0..n-1 in the ratio 66:16:20 (largest-remainder rounding, each
/// part non-empty), shuffled by `seed`; ids within each part are sorted.
[[nodiscard]] Split split_dataset(std::size_t n, std::uint64_t seed);

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const Split& s);
void from_json(const nlohmann::json& j, Split& s);

}  // namespace alamo::phantom
