#include "alamo/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include "alamo/rng.hpp"

namespace alamo::phantom {

namespace {

// Fixed spatial frequencies of the shading field, in cycles per grid extent.
constexpr std::array<std::array<double, 3>, 3> kBiasFrequencies = {{{1.0, 1.0, 0.0}, {0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}}};

struct Box {
    std::array<double, 3> lo;
    std::array<double, 3> hi;
};

Box bounds(const Shape& s) {
    if (s.kind == ShapeKind::Tube) {
        const double r = s.radii[0];
        Box b;
        for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(s.center[a], s.end[a]) - r;
            b.hi[a] = std::max(s.center[a], s.end[a]) + r;
        }
        return b;
    }
    const double c = std::cos(s.angle);
    const double sn = std::sin(s.angle);
    const double hy = std::hypot(s.radii[1] * c, s.radii[2] * sn);
    const double hx = std::hypot(s.radii[1] * sn, s.radii[2] * c);
    return {{s.center[0] - s.radii[0], s.center[1] - hy, s.center[2] - hx},
            {s.center[0] + s.radii[0], s.center[1] + hy, s.center[2] + hx}};
}

}  // namespace

bool Shape::contains(double z, double y, double x) const {
    if (kind == ShapeKind::Tube) {
        const std::array<double, 3> p{z - center[0], y - center[1], x - center[2]};
        const std::array<double, 3> d{end[0] - center[0], end[1] - center[1], end[2] - center[2]};
        const double dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        double t = dd > 0.0 ? (p[0] * d[0] + p[1] * d[1] + p[2] * d[2]) / dd : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        double dist2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double e = p[a] - t * d[a];
            dist2 += e * e;
        }
        return dist2 <= radii[0] * radii[0];
    }
    const double dz = z - center[0];
    const double dy = y - center[1];
    const double dx = x - center[2];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = c * dy + s * dx;
    const double w = -s * dy + c * dx;
    const double q = (dz / radii[0]) * (dz / radii[0]) + (u / radii[1]) * (u / radii[1]) +
                     (w / radii[2]) * (w / radii[2]);
    return q <= 1.0;
}

void PhantomSpec::validate() const {
    if (dims.empty()) throw ConfigError("phantom dims must be positive");
    if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ConfigError("phantom spacing must be positive");
    if (shapes.size() > 10) throw ConfigError("at most 10 organ shapes");
    if (noise_sigma < 0.0 || bias_amplitude < 0.0) throw ConfigError("noise_sigma and bias_amplitude must be >= 0");
    std::set<int> seen;
    const std::array<double, 3> max_idx{static_cast<double>(dims.z - 1), static_cast<double>(dims.y - 1),
                                        static_cast<double>(dims.x - 1)};
    for (const Shape& s : shapes) {
        if (s.class_id < 1 || s.class_id >= kClassCount) {
            throw ConfigError("shape class id out of range: " + std::to_string(s.class_id));
        }
        if (!seen.insert(s.class_id).second) throw ConfigError("duplicate class id: " + std::to_string(s.class_id));
        const int nr = s.kind == ShapeKind::Tube ? 1 : 3;
        for (int a = 0; a < nr; ++a) {
            if (!(s.radii[a] > 0.0)) throw ConfigError("shape radii must be positive");
        }
        const Box b = bounds(s);
        for (int a = 0; a < 3; ++a) {
            if (b.lo[a] < 0.0 || b.hi[a] > max_idx[a]) {
                throw ConfigError("shape out of bounds: class " + std::to_string(s.class_id));
            }
        }
    }
}

PhantomSpec default_spec(Dims3 dims, int organ_count, std::uint64_t seed, double noise_sigma,
                         double bias_amplitude) {
    if (organ_count < 0 || organ_count > 10) throw ConfigError("organ count must be in [0, 10]");
    if (dims.z < 4 || dims.y < 8 || dims.x < 8) throw ConfigError("phantom dims too small (min 4x8x8)");

    struct Layout {
        ShapeKind kind;
        std::array<double, 3> c;  // fractions of dims
        std::array<double, 3> r;  // fractions of dims (tube: radius fraction of min(y, x))
        double angle;
        std::array<double, 3> e;
    };
    // Index i describes class id i + 1.
    static const std::array<Layout, 10> layout = {{
        {ShapeKind::Ellipsoid, {0.50, 0.42, 0.30}, {0.35, 0.22, 0.20}, 0.30, {}},
        {ShapeKind::Ellipsoid, {0.50, 0.45, 0.78}, {0.22, 0.12, 0.08}, -0.40, {}},
        {ShapeKind::Ellipsoid, {0.50, 0.52, 0.56}, {0.14, 0.07, 0.17}, -0.20, {}},
        {ShapeKind::Ellipsoid, {0.50, 0.66, 0.28}, {0.20, 0.09, 0.07}, 0.15, {}},
        {ShapeKind::Ellipsoid, {0.50, 0.66, 0.72}, {0.20, 0.09, 0.07}, -0.15, {}},
        {ShapeKind::Ellipsoid, {0.55, 0.30, 0.62}, {0.20, 0.11, 0.12}, 0.50, {}},
        {ShapeKind::Tube, {0.35, 0.46, 0.42}, {0.045, 0, 0}, 0.0, {0.65, 0.54, 0.44}},
        {ShapeKind::Ellipsoid, {0.40, 0.22, 0.45}, {0.16, 0.08, 0.14}, 0.0, {}},
        {ShapeKind::Tube, {0.08, 0.84, 0.50}, {0.035, 0, 0}, 0.0, {0.92, 0.84, 0.50}},
        {ShapeKind::Tube, {0.08, 0.73, 0.50}, {0.065, 0, 0}, 0.0, {0.92, 0.73, 0.50}},
    }};

    PhantomSpec spec;
    spec.dims = dims;
    spec.seed = seed;
    spec.noise_sigma = noise_sigma;
    spec.bias_amplitude = bias_amplitude;
    spec.intensity_mean = {0.0, 0.55, 0.75, 0.65, 0.9, 0.9, 0.35, 0.45, 0.5, 1.0, 0.25};

    Rng rng = Rng::derive(seed, 0x5045);
    const std::array<double, 3> ext{static_cast<double>(dims.z), static_cast<double>(dims.y),
                                    static_cast<double>(dims.x)};
    const std::array<double, 3> max_idx{ext[0] - 1, ext[1] - 1, ext[2] - 1};
    const double plane = std::min(ext[1], ext[2]);

    for (int i = 0; i < organ_count; ++i) {
        const Layout& L = layout[static_cast<std::size_t>(i)];
        Shape s;
        s.kind = L.kind;
        s.class_id = static_cast<ClassId>(i + 1);
        s.angle = L.angle;
        const double scale = rng.uniform(0.9, 1.1);
        std::array<double, 3> jitter{};
        for (auto& j : jitter) j = rng.uniform(-0.03, 0.03);
        for (int a = 0; a < 3; ++a) s.center[a] = (L.c[a] + jitter[a]) * max_idx[a];
        if (L.kind == ShapeKind::Tube) {
            for (int a = 0; a < 3; ++a) s.end[a] = (L.e[a] + jitter[a]) * max_idx[a];
            s.radii = {std::max(1.0, L.r[0] * plane * scale), 0.0, 0.0};
        } else {
            for (int a = 0; a < 3; ++a) s.radii[a] = std::max(1.0, L.r[a] * ext[a] * scale);
        }
        // Pull the shape inside the grid, shrinking it if it cannot fit.
        for (int iter = 0; iter < 8; ++iter) {
            const Box b = bounds(s);
            bool ok = true;
            for (int a = 0; a < 3; ++a) {
                double shift = 0.0;
                if (b.lo[a] < 0.0) shift = -b.lo[a];
                if (b.hi[a] > max_idx[a]) shift = max_idx[a] - b.hi[a];
                if (b.hi[a] - b.lo[a] > max_idx[a]) {
                    ok = false;
                    continue;
                }
                s.center[a] += shift;
                if (L.kind == ShapeKind::Tube) s.end[a] += shift;
            }
            if (ok) break;
            for (auto& r : s.radii) r = r > 0.0 ? std::max(0.5, r * 0.8) : r;
        }
        spec.shapes.push_back(s);
    }
    spec.validate();
    return spec;
}

std::pair<Volume, LabelMap> generate(const PhantomSpec& spec) {
    spec.validate();
    const Dims3 d = spec.dims;
    LabelMap labels{Grid3<ClassId>(d, 0), spec.spacing};
    Volume vol{Grid3<float>(d), spec.spacing};

    Rng rng(spec.seed);
    std::array<double, 3> phase{};
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                ClassId id = 0;
                for (const Shape& s : spec.shapes) {
                    if (s.contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) {
                        id = s.class_id;
                    }
                }
                labels.voxels(z, y, x) = id;
                double bias = 0.0;
                if (spec.bias_amplitude > 0.0) {
                    const std::array<double, 3> u{static_cast<double>(z) / static_cast<double>(d.z),
                                                  static_cast<double>(y) / static_cast<double>(d.y),
                                                  static_cast<double>(x) / static_cast<double>(d.x)};
                    for (std::size_t k = 0; k < 3; ++k) {
                        const auto& f = kBiasFrequencies[k];
                        bias += std::cos(two_pi * (f[0] * u[0] + f[1] * u[1] + f[2] * u[2]) + phase[k]);
                    }
                    bias *= spec.bias_amplitude / 3.0;
                }
                const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
                vol.voxels(z, y, x) = static_cast<float>(spec.intensity_mean[id] + bias + noise);
            }
    return {std::move(vol), std::move(labels)};
}

Split split_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 3) throw std::invalid_argument("split_dataset requires n >= 3");
    constexpr std::array<std::size_t, 3> ratio{66, 16, 20};
    constexpr std::size_t total = 66 + 16 + 20;

    // Hamilton apportionment, ties resolved toward the earlier part.
    std::array<std::size_t, 3> size{};
    std::array<std::size_t, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        size[i] = n * ratio[i] / total;
        rem[i] = n * ratio[i] % total;
        assigned += size[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++size[order[k % 3]];
    for (std::size_t i = 0; i < 3; ++i) {
        while (size[i] == 0) {
            const auto big = static_cast<std::size_t>(std::max_element(size.begin(), size.end()) - size.begin());
            --size[big];
            ++size[i];
        }
    }

    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(ids[i], ids[j]);
    }
    Split s;
    auto take = [&](std::vector<std::size_t>& dst, std::size_t from, std::size_t count) {
        dst.assign(ids.begin() + static_cast<std::ptrdiff_t>(from),
                   ids.begin() + static_cast<std::ptrdiff_t>(from + count));
        std::sort(dst.begin(), dst.end());
    };
    take(s.train, 0, size[0]);
    take(s.val, size[0], size[1]);
    take(s.test, size[0] + size[1], size[2]);
    return s;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const Shape& sh : s.shapes) {
        nlohmann::json o = {{"kind", sh.kind == ShapeKind::Tube ? "tube" : "ellipsoid"},
                            {"class_id", sh.class_id},
                            {"center", sh.center},
                            {"radii", sh.radii},
                            {"angle", sh.angle}};
        if (sh.kind == ShapeKind::Tube) o["end"] = sh.end;
        shapes.push_back(std::move(o));
    }
    j = {{"dims", {s.dims.z, s.dims.y, s.dims.x}},
         {"spacing_mm", {s.spacing.z, s.spacing.y, s.spacing.x}},
         {"seed", s.seed},
         {"shapes", std::move(shapes)},
         {"intensity_mean", s.intensity_mean},
         {"noise_sigma", s.noise_sigma},
         {"bias_amplitude", s.bias_amplitude}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    const auto d = j.at("dims");
    s.dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
    if (j.contains("spacing_mm")) {
        const auto sp = j.at("spacing_mm");
        s.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
    }
    s.seed = j.value("seed", std::uint64_t{0});
    s.shapes.clear();
    for (const auto& o : j.value("shapes", nlohmann::json::array())) {
        Shape sh;
        sh.kind = o.value("kind", std::string("ellipsoid")) == "tube" ? ShapeKind::Tube : ShapeKind::Ellipsoid;
        sh.class_id = o.at("class_id").get<ClassId>();
        sh.center = o.at("center").get<std::array<double, 3>>();
        sh.radii = o.at("radii").get<std::array<double, 3>>();
        sh.angle = o.value("angle", 0.0);
        if (o.contains("end")) sh.end = o.at("end").get<std::array<double, 3>>();
        s.shapes.push_back(sh);
    }
    if (j.contains("intensity_mean")) s.intensity_mean = j.at("intensity_mean").get<std::array<double, kClassCount>>();
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.bias_amplitude = j.value("bias_amplitude", 0.0);
}

void to_json(nlohmann::json& j, const Split& s) { j = {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

void from_json(const nlohmann::json& j, Split& s) {
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.val = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
}

}  // namespace alamo::phantom
