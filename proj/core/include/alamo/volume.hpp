#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "alamo/error.hpp"

namespace alamo {

/// Extents of a 3D grid, indexed [z][y][x] with x fastest-varying.
struct Dims3 {
    std::size_t z = 0;
    std::size_t y = 0;
    std::size_t x = 0;

    [[nodiscard]] constexpr std::size_t count() const { return z * y * x; }
    [[nodiscard]] constexpr bool empty() const { return z == 0 || y == 0 || x == 0; }
    friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

/// Physical voxel spacing in millimeters, same axis order as Dims3.
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    [[nodiscard]] bool is_isotropic(double tol = 1e-9) const;
    friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense row-major 3D array.
template <typename T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {}
    Grid3(Dims3 dims, std::vector<T> data);

    [[nodiscard]] const Dims3& dims() const { return dims_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
        return (z * dims_.y + y) * dims_.x + x;
    }
    T& operator()(std::size_t z, std::size_t y, std::size_t x) { return data_[index(z, y, x)]; }
    const T& operator()(std::size_t z, std::size_t y, std::size_t x) const { return data_[index(z, y, x)]; }

    [[nodiscard]] std::span<T> values() { return data_; }
    [[nodiscard]] std::span<const T> values() const { return data_; }
    [[nodiscard]] std::vector<T>& storage() { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const { return data_; }

    friend bool operator==(const Grid3&, const Grid3&) = default;

private:
    Dims3 dims_;
    std::vector<T> data_;
};

template <typename T>
Grid3<T>::Grid3(Dims3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.count()) throw ShapeError("Grid3: data length does not match dims");
}

inline constexpr int kClassCount = 11;
using ClassId = std::uint8_t;

/// Class taxonomy: background plus ten abdominal organs.
inline constexpr std::array<std::string_view, kClassCount> kClassNames = {
    "background", "liver",    "spleen",          "pancreas",    "right_kidney",    "left_kidney",
    "stomach",    "duodenum", "small_intestine", "spinal_cord", "vertebral_bodies"};

[[nodiscard]] std::string_view class_name(int id);

/// MR intensity image.
struct Volume {
    Grid3<float> voxels;
    Spacing spacing;

    [[nodiscard]] const Dims3& dims() const { return voxels.dims(); }
};

/// Integer class map over the 11-class taxonomy.
struct LabelMap {
    Grid3<ClassId> voxels;
    Spacing spacing;

    [[nodiscard]] const Dims3& dims() const { return voxels.dims(); }
    /// Throws if any voxel is outside [0, kClassCount).
    void validate() const;
};

/// Per-voxel class probabilities, one grid per class.
struct ProbMap {
    std::vector<Grid3<float>> classes;  // size kClassCount
    Spacing spacing;

    ProbMap() = default;
    ProbMap(Dims3 dims, Spacing sp) : classes(kClassCount, Grid3<float>(dims)), spacing(sp) {}

    [[nodiscard]] Dims3 dims() const { return classes.empty() ? Dims3{} : classes.front().dims(); }
    [[nodiscard]] LabelMap argmax() const;
};

enum class ViewAxis { Transversal, Coronal, Sagittal };

inline constexpr std::array<ViewAxis, 3> kAllViews = {ViewAxis::Transversal, ViewAxis::Coronal,
                                                      ViewAxis::Sagittal};

[[nodiscard]] std::string_view view_name(ViewAxis v);
[[nodiscard]] ViewAxis parse_view(std::string_view s);  // "t"/"c"/"s" or full names

// ---------------------------------------------------------------------------
// .mvol file I/O

[[nodiscard]] Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);
[[nodiscard]] LabelMap load_labels(const std::filesystem::path& path);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Resampling. Grid-corner alignment: output index i sits at physical i * t,
// i.e. at continuous source index i * t / s.

[[nodiscard]] Dims3 resampled_dims(Dims3 dims, Spacing spacing, double target_spacing_mm);

/// Trilinear resampling with clamp-to-edge outside the source grid.
template <typename T>
[[nodiscard]] Grid3<T> resample_trilinear(const Grid3<T>& src, Spacing src_spacing, Dims3 out_dims,
                                          Spacing out_spacing);

/// Nearest-neighbor resampling; never introduces new values.
template <typename T>
[[nodiscard]] Grid3<T> resample_nearest(const Grid3<T>& src, Spacing src_spacing, Dims3 out_dims,
                                        Spacing out_spacing);

[[nodiscard]] Volume resample_isotropic(const Volume& v, double target_spacing_mm);
[[nodiscard]] LabelMap resample_labels_isotropic(const LabelMap& labels, double target_spacing_mm);
/// Nearest-neighbor resampling of labels onto an explicit target grid.
[[nodiscard]] LabelMap resample_labels_to(const LabelMap& labels, Dims3 dims, Spacing spacing);

/// Zero-mean, unit population-std intensity over the whole volume.
[[nodiscard]] Volume standardize(const Volume& v);

// ---------------------------------------------------------------------------
// View re-slicing. Each view puts its slicing axis first:
//   Transversal  out[z][y][x] = in[z][y][x]
//   Coronal      out[y][z][x] = in[z][y][x]
//   Sagittal     out[x][z][y] = in[z][y][x]

[[nodiscard]] Dims3 resliced_dims(Dims3 dims, ViewAxis view);

template <typename T>
[[nodiscard]] Grid3<T> reslice(const Grid3<T>& g, ViewAxis view);
template <typename T>
[[nodiscard]] Grid3<T> unreslice(const Grid3<T>& g, ViewAxis view);

[[nodiscard]] Volume reslice(const Volume& v, ViewAxis view);
[[nodiscard]] LabelMap reslice(const LabelMap& l, ViewAxis view);
[[nodiscard]] ProbMap reslice(const ProbMap& p, ViewAxis view);
[[nodiscard]] Volume unreslice(const Volume& v, ViewAxis view);
[[nodiscard]] LabelMap unreslice(const LabelMap& l, ViewAxis view);
[[nodiscard]] ProbMap unreslice(const ProbMap& p, ViewAxis view);

}  // namespace alamo
