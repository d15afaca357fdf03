#include "alamo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

namespace alamo::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kAutoPairLimit = 1e6;

void check_dims(const Mask& a, const Mask& b) {
    if (!(a.dims() == b.dims())) throw ShapeError("mask dims differ");
}

struct Counts {
    std::size_t a = 0, b = 0, both = 0;
};

Counts count(const Mask& a, const Mask& b) {
    check_dims(a, b);
    Counts c;
    const auto va = a.values();
    const auto vb = b.values();
    for (std::size_t i = 0; i < va.size(); ++i) {
        const bool x = va[i] != 0;
        const bool y = vb[i] != 0;
        c.a += x;
        c.b += y;
        c.both += x && y;
    }
    return c;
}

/// One lower-envelope pass of f(q) + w (p - q)^2 along a line of n samples.
void edt_1d(const double* f, double* out, std::size_t n, double w, std::vector<std::size_t>& v,
            std::vector<double>& z) {
    v.resize(n);
    z.resize(n + 1);
    std::ptrdiff_t k = -1;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        while (true) {
            if (k < 0) {
                v[0] = q;
                z[0] = -kInf;
                z[1] = kInf;
                k = 0;
                break;
            }
            const std::size_t p = v[static_cast<std::size_t>(k)];
            const double qd = static_cast<double>(q);
            const double pd = static_cast<double>(p);
            const double s = ((f[q] + w * qd * qd) - (f[p] + w * pd * pd)) / (2.0 * w * (qd - pd));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
                continue;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            z[static_cast<std::size_t>(k) + 1] = kInf;
            break;
        }
    }
    if (k < 0) {
        std::fill(out, out + n, kInf);
        return;
    }
    std::size_t j = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (z[j + 1] < qd) ++j;
        const double d = qd - static_cast<double>(v[j]);
        out[q] = f[v[j]] + w * d * d;
    }
}

std::vector<std::size_t> surface_indices(const Mask& s) {
    std::vector<std::size_t> idx;
    const auto v = s.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i]) idx.push_back(i);
    }
    return idx;
}

Point center(const Dims3& d, std::size_t i, Spacing sp) {
    const std::size_t x = i % d.x;
    const std::size_t y = (i / d.x) % d.y;
    const std::size_t z = i / (d.x * d.y);
    return {static_cast<double>(z) * sp.z, static_cast<double>(y) * sp.y, static_cast<double>(x) * sp.x};
}

void directed_brute(const std::vector<Point>& from, const std::vector<Point>& to, std::vector<double>& out) {
    for (const Point& p : from) {
        double best = kInf;
        for (const Point& q : to) {
            const double dz = p[0] - q[0];
            const double dy = p[1] - q[1];
            const double dx = p[2] - q[2];
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(best));
    }
}

void directed_transform(const std::vector<std::size_t>& from, const Mask& to_surface, Spacing sp,
                        std::vector<double>& out) {
    const Grid3<double> dt = squared_distance_transform(to_surface, sp);
    for (std::size_t i : from) out.push_back(std::sqrt(dt.values()[i]));
}

}  // namespace

Mask binarize(const LabelMap& labels, ClassId id) {
    Mask m(labels.dims());
    const auto src = labels.voxels.values();
    auto dst = m.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] == id ? 1 : 0;
    return m;
}

double dsc(const Mask& a, const Mask& b) {
    const Counts c = count(a, b);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double jaccard(const Mask& a, const Mask& b) {
    const Counts c = count(a, b);
    const std::size_t uni = c.a + c.b - c.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.both) / static_cast<double>(uni);
}

Mask surface_mask(const Mask& a) {
    const Dims3 d = a.dims();
    Mask s(d);
    auto fg = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(d.z) ||
            y >= static_cast<std::ptrdiff_t>(d.y) || x >= static_cast<std::ptrdiff_t>(d.x)) {
            return false;
        }
        return a(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0;
    };
    for (std::size_t z = 0; z < d.z; ++z) {
        for (std::size_t y = 0; y < d.y; ++y) {
            for (std::size_t x = 0; x < d.x; ++x) {
                if (!a(z, y, x)) continue;
                const auto Z = static_cast<std::ptrdiff_t>(z);
                const auto Y = static_cast<std::ptrdiff_t>(y);
                const auto X = static_cast<std::ptrdiff_t>(x);
                const bool interior = fg(Z - 1, Y, X) && fg(Z + 1, Y, X) && fg(Z, Y - 1, X) && fg(Z, Y + 1, X) &&
                                      fg(Z, Y, X - 1) && fg(Z, Y, X + 1);
                s(z, y, x) = interior ? 0 : 1;
            }
        }
    }
    return s;
}

std::vector<Point> surface(const Mask& a, Spacing spacing) {
    const Mask s = surface_mask(a);
    std::vector<Point> pts;
    for (std::size_t i : surface_indices(s)) pts.push_back(center(a.dims(), i, spacing));
    if (pts.empty()) throw std::invalid_argument("surface of an empty mask");
    return pts;
}

Grid3<double> squared_distance_transform(const Mask& mask, Spacing sp) {
    const Dims3 d = mask.dims();
    Grid3<double> g(d);
    const auto src = mask.values();
    auto dst = g.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 0.0 : kInf;

    std::vector<std::size_t> v;
    std::vector<double> z;
    const std::size_t longest = std::max({d.x, d.y, d.z});
    std::vector<double> line(longest), out(longest);
    // x, then y, then z: the accumulated sum is dx^2 + dy^2 + dz^2 in that order.
    for (std::size_t zi = 0; zi < d.z; ++zi) {
        for (std::size_t y = 0; y < d.y; ++y) {
            double* row = &g(zi, y, 0);
            std::copy(row, row + d.x, line.begin());
            edt_1d(line.data(), row, d.x, sp.x * sp.x, v, z);
        }
    }
    for (std::size_t zi = 0; zi < d.z; ++zi) {
        for (std::size_t x = 0; x < d.x; ++x) {
            for (std::size_t y = 0; y < d.y; ++y) line[y] = g(zi, y, x);
            edt_1d(line.data(), out.data(), d.y, sp.y * sp.y, v, z);
            for (std::size_t y = 0; y < d.y; ++y) g(zi, y, x) = out[y];
        }
    }
    for (std::size_t y = 0; y < d.y; ++y) {
        for (std::size_t x = 0; x < d.x; ++x) {
            for (std::size_t zi = 0; zi < d.z; ++zi) line[zi] = g(zi, y, x);
            edt_1d(line.data(), out.data(), d.z, sp.z * sp.z, v, z);
            for (std::size_t zi = 0; zi < d.z; ++zi) g(zi, y, x) = out[zi];
        }
    }
    return g;
}

std::vector<double> surface_distances(const Mask& a, const Mask& b, Spacing spacing, DistanceMethod method) {
    check_dims(a, b);
    const Mask sa = surface_mask(a);
    const Mask sb = surface_mask(b);
    const auto ia = surface_indices(sa);
    const auto ib = surface_indices(sb);
    if (ia.empty() || ib.empty()) throw std::invalid_argument("surface distance with an empty mask");
    if (method == DistanceMethod::Auto) {
        method = static_cast<double>(ia.size()) * static_cast<double>(ib.size()) > kAutoPairLimit
                     ? DistanceMethod::Transform
                     : DistanceMethod::BruteForce;
    }
    std::vector<double> out;
    out.reserve(ia.size() + ib.size());
    if (method == DistanceMethod::Transform) {
        directed_transform(ia, sb, spacing, out);
        directed_transform(ib, sa, spacing, out);
    } else {
        std::vector<Point> pa, pb;
        for (std::size_t i : ia) pa.push_back(center(a.dims(), i, spacing));
        for (std::size_t i : ib) pb.push_back(center(b.dims(), i, spacing));
        directed_brute(pa, pb, out);
        directed_brute(pb, pa, out);
    }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double msd(const Mask& a, const Mask& b, Spacing spacing, DistanceMethod method) {
    auto d = surface_distances(a, b, spacing, method);
    // Summing in sorted order makes the result independent of argument order.
    std::sort(d.begin(), d.end());
    double s = 0.0;
    for (double x : d) s += x;
    return s / static_cast<double>(d.size());
}

double hausdorff(const Mask& a, const Mask& b, Spacing spacing, double q, DistanceMethod method) {
    return percentile(surface_distances(a, b, spacing, method), q);
}

double hd95(const Mask& a, const Mask& b, Spacing spacing, DistanceMethod method) {
    return hausdorff(a, b, spacing, 0.95, method);
}

std::vector<ClassMetrics> evaluate(const LabelMap& pred, const LabelMap& gt) {
    if (!(pred.dims() == gt.dims())) throw ShapeError("evaluate: prediction and ground truth dims differ");
    std::vector<ClassMetrics> out;
    for (int id = 1; id < kClassCount; ++id) {
        const Mask p = binarize(pred, static_cast<ClassId>(id));
        const Mask g = binarize(gt, static_cast<ClassId>(id));
        ClassMetrics m;
        m.class_id = id;
        m.dsc = dsc(p, g);
        m.jaccard = jaccard(p, g);
        const Counts c = count(p, g);
        if (c.a > 0 && c.b > 0) {
            const auto d = surface_distances(p, g, gt.spacing);
            double s = 0.0;
            for (double x : d) s += x;
            m.msd_mm = s / static_cast<double>(d.size());
            m.hd95_mm = percentile(d, 0.95);
        }
        out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------------------

double paired_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_test: samples differ in length");
    std::vector<double> diff;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (!std::isfinite(d)) throw std::invalid_argument("paired_test: non-finite value");
        if (d != 0.0) diff.push_back(d);
    }
    if (diff.empty()) return 1.0;
    if (a.size() < 5) throw std::invalid_argument("paired_test: need at least 5 pairs");

    const std::size_t n = diff.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
    // Doubled average ranks are integers.
    std::vector<std::size_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
        const std::size_t r2 = (i + 1) + (j + 1);  // 2 * mean of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    std::size_t w2 = 0;  // doubled W+
    std::size_t total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (diff[i] > 0) w2 += rank2[i];
    }

    double p;
    if (n <= 25) {
        std::vector<double> ways(total2 + 1, 0.0);
        ways[0] = 1.0;
        for (std::size_t r : rank2) {
            for (std::size_t s = total2; s >= r; --s) ways[s] += ways[s - r];
        }
        double le = 0.0, ge = 0.0, all = 0.0;
        for (std::size_t s = 0; s <= total2; ++s) {
            all += ways[s];
            if (s <= w2) le += ways[s];
            if (s >= w2) ge += ways[s];
        }
        p = 2.0 * std::min(le, ge) / all;
    } else {
        const double nd = static_cast<double>(n);
        const double mean = nd * (nd + 1.0) / 4.0;
        const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
        const double w = static_cast<double>(w2) / 2.0;
        const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
        p = std::erfc(z / std::sqrt(2.0));
    }
    return std::min(1.0, p);
}

// ---------------------------------------------------------------------------

std::optional<double> metric_value(const ClassMetrics& m, std::size_t index) {
    switch (index) {
        case 0: return m.dsc;
        case 1: return m.jaccard;
        case 2: return m.msd_mm;
        case 3: return m.hd95_mm;
        default: throw std::out_of_range("metric index");
    }
}

namespace {

struct Stats {
    double mean = 0.0, stdev = 0.0;
    std::size_t n = 0;
};

Stats stats(const std::vector<double>& v) {
    Stats s;
    s.n = v.size();
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(var / static_cast<double>(v.size()));
    return s;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<CaseRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("summarize: no rows");
    std::map<int, std::vector<const ClassMetrics*>> by_class;
    for (const auto& r : rows) by_class[r.m.class_id].push_back(&r.m);

    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> class_means(kMetricNames.size());
    std::vector<std::size_t> classes_excluded(kMetricNames.size(), 0);
    for (const auto& [id, ms] : by_class) {
        for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
            std::vector<double> vals;
            std::size_t excluded = 0;
            for (const ClassMetrics* m : ms) {
                if (auto v = metric_value(*m, k)) {
                    vals.push_back(*v);
                } else {
                    ++excluded;
                }
            }
            const Stats s = stats(vals);
            out.push_back({std::to_string(id), kMetricNames[k], s.mean, s.stdev, s.n, excluded});
            if (s.n > 0) {
                class_means[k].push_back(s.mean);
            } else {
                ++classes_excluded[k];
            }
        }
    }
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
        const Stats s = stats(class_means[k]);
        out.push_back({"mean", kMetricNames[k], s.mean, s.stdev, s.n, classes_excluded[k]});
    }
    return out;
}

void write_case_csv(std::ostream& os, const std::vector<CaseRow>& rows) {
    os << "case_id,class_id,class_name,dsc,jaccard,msd_mm,hd95_mm\n";
    for (const auto& r : rows) {
        os << r.case_id << ',' << r.m.class_id << ',' << class_name(r.m.class_id) << ',' << fmt_double(r.m.dsc)
           << ',' << fmt_double(r.m.jaccard) << ',' << fmt_opt(r.m.msd_mm) << ',' << fmt_opt(r.m.hd95_mm) << '\n';
    }
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "# pooling: per-class rows average over cases; 'mean' rows average the per-class means over classes"
          " (n = classes with a defined mean)\n";
    os << "class_id,metric,mean,std,n,n_excluded\n";
    for (const auto& r : rows) {
        os << r.class_id << ',' << r.metric << ',' << fmt_double(r.mean) << ',' << fmt_double(r.stdev) << ','
           << r.n << ',' << r.n_excluded << '\n';
    }
}

std::vector<SignificanceRow> compare(const std::vector<CaseRow>& a, const std::vector<CaseRow>& b,
                                     const std::string& name_a, const std::string& name_b) {
    std::map<std::pair<std::string, int>, const ClassMetrics*> index_b;
    for (const auto& r : b) index_b[{r.case_id, r.m.class_id}] = &r.m;
    if (a.size() != b.size()) throw std::invalid_argument("compare: methods cover different cases");

    std::vector<SignificanceRow> out;
    for (int id = 1; id < kClassCount; ++id) {
        for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
            std::vector<double> xa, xb;
            for (const auto& r : a) {
                if (r.m.class_id != id) continue;
                auto it = index_b.find({r.case_id, id});
                if (it == index_b.end()) throw std::invalid_argument("compare: unpaired case id " + r.case_id);
                const auto va = metric_value(r.m, k);
                const auto vb = metric_value(*it->second, k);
                if (va && vb) {
                    xa.push_back(*va);
                    xb.push_back(*vb);
                }
            }
            SignificanceRow row{id, kMetricNames[k], name_a, name_b, std::nullopt};
            const bool all_equal = std::equal(xa.begin(), xa.end(), xb.begin());
            if (!xa.empty() && (all_equal || xa.size() >= 5)) row.p_value = paired_test(xa, xb);
            out.push_back(row);
        }
    }
    return out;
}

void write_significance_csv(std::ostream& os, const std::vector<SignificanceRow>& rows) {
    os << "class_id,metric,method_a,method_b,p_value\n";
    for (const auto& r : rows) {
        os << r.class_id << ',' << r.metric << ',' << r.method_a << ',' << r.method_b << ',' << fmt_opt(r.p_value)
           << '\n';
    }
}

}  // namespace alamo::metrics
