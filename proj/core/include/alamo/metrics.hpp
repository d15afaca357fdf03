#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alamo/volume.hpp"

namespace alamo::metrics {

/// Binary mask, 0 or 1 per voxel.
using Mask = Grid3<std::uint8_t>;

[[nodiscard]] Mask binarize(const LabelMap& labels, ClassId id);

/// 2|a∩b| / (|a| + |b|); 1 when both are empty.
[[nodiscard]] double dsc(const Mask& a, const Mask& b);
/// |a∩b| / |a∪b|; 1 when both are empty.
[[nodiscard]] double jaccard(const Mask& a, const Mask& b);

using Point = std::array<double, 3>;  // (z, y, x) in mm

/// True for foreground voxels with a 6-neighbor that is background or outside the grid.
[[nodiscard]] Mask surface_mask(const Mask& a);
/// Surface voxel centers in mm; throws std::invalid_argument for an empty mask.
[[nodiscard]] std::vector<Point> surface(const Mask& a, Spacing spacing);

enum class DistanceMethod {
    BruteForce,  // all surface pairs
    Transform,   // exact separable Euclidean distance transform
    Auto,        // Transform once the pair count gets large
};

/// Symmetric multiset of nearest-surface distances: d(p, S_b) for p in S_a,
/// then d(q, S_a) for q in S_b, each half in surface scan order.
[[nodiscard]] std::vector<double> surface_distances(const Mask& a, const Mask& b, Spacing spacing,
                                                    DistanceMethod method = DistanceMethod::Auto);

/// Linear interpolation between order statistics at position q * (n - 1).
[[nodiscard]] double percentile(std::vector<double> values, double q);

[[nodiscard]] double msd(const Mask& a, const Mask& b, Spacing spacing, DistanceMethod method = DistanceMethod::Auto);
[[nodiscard]] double hd95(const Mask& a, const Mask& b, Spacing spacing,
                          DistanceMethod method = DistanceMethod::Auto);
/// q-th percentile Hausdorff distance, q in [0, 1].
[[nodiscard]] double hausdorff(const Mask& a, const Mask& b, Spacing spacing, double q,
                               DistanceMethod method = DistanceMethod::Auto);

/// Squared Euclidean distance (mm^2) from each voxel to the nearest nonzero voxel of `mask`.
[[nodiscard]] Grid3<double> squared_distance_transform(const Mask& mask, Spacing spacing);

struct ClassMetrics {
    int class_id = 0;
    double dsc = 0.0;
    double jaccard = 0.0;
    std::optional<double> msd_mm;   // undefined when either mask is empty
    std::optional<double> hd95_mm;
};

/// Metrics for class ids 1..10, spacing taken from `gt`.
[[nodiscard]] std::vector<ClassMetrics> evaluate(const LabelMap& pred, const LabelMap& gt);

/// Two-sided Wilcoxon signed-rank p-value for paired samples. Zero
/// differences are dropped and tied magnitudes get average ranks; the null
/// distribution is exact up to 25 nonzero pairs, normal (tie and continuity
/// corrected) beyond. Returns 1 when every difference is zero.
[[nodiscard]] double paired_test(std::span<const double> a, std::span<const double> b);

inline constexpr std::array<const char*, 4> kMetricNames{"dsc", "jaccard", "msd_mm", "hd95_mm"};

struct CaseRow {
    std::string case_id;
    ClassMetrics m;
};

struct SummaryRow {
    std::string class_id;  // "1".."10" or "mean"
    std::string metric;
    double mean = 0.0;
    double stdev = 0.0;  // population
    std::size_t n = 0;
    std::size_t n_excluded = 0;
};

/// Value of metric `index` (position in kMetricNames), if defined.
[[nodiscard]] std::optional<double> metric_value(const ClassMetrics& m, std::size_t index);

/// Per-class mean and population std over cases, then a grand "mean" row per
/// metric averaging the per-class means. Throws std::invalid_argument if empty.
[[nodiscard]] std::vector<SummaryRow> summarize(const std::vector<CaseRow>& rows);

void write_case_csv(std::ostream& os, const std::vector<CaseRow>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

struct SignificanceRow {
    int class_id = 0;
    std::string metric;
    std::string method_a;
    std::string method_b;
    std::optional<double> p_value;  // empty when fewer than 5 pairs are defined
};

/// Paired test per class and metric over cases where both methods are defined.
[[nodiscard]] std::vector<SignificanceRow> compare(const std::vector<CaseRow>& a, const std::vector<CaseRow>& b,
                                                   const std::string& name_a, const std::string& name_b);
void write_significance_csv(std::ostream& os, const std::vector<SignificanceRow>& rows);

}  // namespace alamo::metrics
