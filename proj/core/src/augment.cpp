#include "alamo/augment.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

namespace alamo::augment {

void DeformParams::validate(const DeformLimits& limits) const {
    if (std::abs(rotation) > limits.rotation_max) throw std::invalid_argument("rotation outside its range");
    if (std::abs(shear) > limits.shear_max) throw std::invalid_argument("shear outside its range");
    if (std::abs(projective) > limits.projective_max) throw std::invalid_argument("projective outside its range");
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = {{"flip_p", c.flip_p},
         {"deform_p", c.deform_p},
         {"rotation_max", c.limits.rotation_max},
         {"shear_max", c.limits.shear_max},
         {"projective_max", c.limits.projective_max},
         {"slab", c.slab}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
    c.flip_p = j.value("flip_p", c.flip_p);
    c.deform_p = j.value("deform_p", c.deform_p);
    c.limits.rotation_max = j.value("rotation_max", c.limits.rotation_max);
    c.limits.shear_max = j.value("shear_max", c.limits.shear_max);
    c.limits.projective_max = j.value("projective_max", c.limits.projective_max);
    if (j.contains("slab")) c.slab = j.at("slab").get<std::array<std::size_t, 3>>();
}

Slab crop_slab(const Volume& v, const LabelMap& labels, ViewAxis view, std::size_t S, std::size_t H,
               std::size_t W, Rng& rng) {
    if (v.dims() != labels.dims()) throw ShapeError("crop_slab: image and label dims differ");
    if (S == 0 || H == 0 || W == 0) throw std::invalid_argument("crop_slab: crop extents must be positive");
    const Grid3<float> img = reslice(v, view).voxels;
    const Grid3<ClassId> lab = reslice(labels, view).voxels;
    const Dims3 d = img.dims();
    if (S > d.z) {
        throw std::invalid_argument("crop_slab: slab of " + std::to_string(S) + " slices exceeds " +
                                    std::to_string(d.z) + " available slices");
    }
    const std::size_t ph = H > d.y ? H : d.y;
    const std::size_t pw = W > d.x ? W : d.x;
    const auto pad_y = static_cast<std::ptrdiff_t>((ph - d.y) / 2);
    const auto pad_x = static_cast<std::ptrdiff_t>((pw - d.x) / 2);

    const auto z0 = static_cast<std::ptrdiff_t>(rng.uniform_int(0, static_cast<std::int64_t>(d.z - S)));
    const auto y0 = static_cast<std::ptrdiff_t>(rng.uniform_int(0, static_cast<std::int64_t>(ph - H))) - pad_y;
    const auto x0 = static_cast<std::ptrdiff_t>(rng.uniform_int(0, static_cast<std::int64_t>(pw - W))) - pad_x;

    Slab s{Grid3<float>({S, H, W}, 0.0f), Grid3<ClassId>({S, H, W}, 0), view, {z0, y0, x0}};
    for (std::size_t k = 0; k < S; ++k) {
        const auto zz = static_cast<std::size_t>(z0) + k;
        for (std::size_t i = 0; i < H; ++i) {
            const std::ptrdiff_t yy = y0 + static_cast<std::ptrdiff_t>(i);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(d.y)) continue;
            for (std::size_t j = 0; j < W; ++j) {
                const std::ptrdiff_t xx = x0 + static_cast<std::ptrdiff_t>(j);
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(d.x)) continue;
                s.image(k, i, j) = img(zz, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                s.labels(k, i, j) = lab(zz, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
        }
    }
    return s;
}

FlipChoice draw_flip(Rng& rng, double p) {
    FlipChoice c;
    c.up_down = rng.bernoulli(p);
    c.left_right = rng.bernoulli(p);
    return c;
}

Slab apply_flip(const Slab& s, FlipChoice choice) {
    if (!choice.up_down && !choice.left_right) return s;
    const Dims3 d = s.dims();
    Slab out = s;
    for (std::size_t k = 0; k < d.z; ++k)
        for (std::size_t i = 0; i < d.y; ++i)
            for (std::size_t j = 0; j < d.x; ++j) {
                const std::size_t si = choice.up_down ? d.y - 1 - i : i;
                const std::size_t sj = choice.left_right ? d.x - 1 - j : j;
                out.image(k, i, j) = s.image(k, si, sj);
                out.labels(k, i, j) = s.labels(k, si, sj);
            }
    return out;
}

Slab random_flip(const Slab& s, double p, Rng& rng) { return apply_flip(s, draw_flip(rng, p)); }

namespace {

Homography multiply(const Homography& a, const Homography& b) {
    Homography c{};
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) {
            double acc = 0.0;
            for (int m = 0; m < 3; ++m) acc += a[r * 3 + m] * b[m * 3 + k];
            c[r * 3 + k] = acc;
        }
    return c;
}

double determinant(const Homography& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography inverse(const Homography& m) {
    const double det = determinant(m);
    if (std::abs(det) < 1e-12) throw std::invalid_argument("projective_deform: homography is not invertible");
    const double inv = 1.0 / det;
    return {(m[4] * m[8] - m[5] * m[7]) * inv, (m[2] * m[7] - m[1] * m[8]) * inv, (m[1] * m[5] - m[2] * m[4]) * inv,
            (m[5] * m[6] - m[3] * m[8]) * inv, (m[0] * m[8] - m[2] * m[6]) * inv, (m[2] * m[3] - m[0] * m[5]) * inv,
            (m[3] * m[7] - m[4] * m[6]) * inv, (m[1] * m[6] - m[0] * m[7]) * inv, (m[0] * m[4] - m[1] * m[3]) * inv};
}

}  // namespace

Homography homography(const DeformParams& p) {
    const double c = std::cos(p.rotation);
    const double s = std::sin(p.rotation);
    const Homography R{c, -s, 0, s, c, 0, 0, 0, 1};
    const Homography Sh{1, p.shear, 0, 0, 1, 0, 0, 0, 1};
    const Homography P{1, 0, 0, 0, 1, 0, p.projective, p.projective, 1};
    return multiply(P, multiply(Sh, R));
}

Slab projective_deform(const Slab& s, const DeformParams& params) {
    if (!params.apply) return s;
    const Homography inv = inverse(homography(params));
    const Dims3 d = s.dims();
    const double cy = (static_cast<double>(d.y) - 1.0) / 2.0;
    const double cx = (static_cast<double>(d.x) - 1.0) / 2.0;
    const auto H = static_cast<std::ptrdiff_t>(d.y);
    const auto W = static_cast<std::ptrdiff_t>(d.x);

    Slab out{Grid3<float>(d, 0.0f), Grid3<ClassId>(d, 0), s.view, s.origin};
    for (std::size_t i = 0; i < d.y; ++i) {
        for (std::size_t j = 0; j < d.x; ++j) {
            const double qx = static_cast<double>(j) - cx;
            const double qy = static_cast<double>(i) - cy;
            const double w = inv[6] * qx + inv[7] * qy + inv[8];
            if (!(w > 0.0)) continue;
            const double px = (inv[0] * qx + inv[1] * qy + inv[2]) / w + cx;
            const double py = (inv[3] * qx + inv[4] * qy + inv[5]) / w + cy;

            const auto ny = static_cast<std::ptrdiff_t>(std::floor(py + 0.5));
            const auto nx = static_cast<std::ptrdiff_t>(std::floor(px + 0.5));
            const bool nearest_in = ny >= 0 && ny < H && nx >= 0 && nx < W;

            const auto y0 = static_cast<std::ptrdiff_t>(std::floor(py));
            const auto x0 = static_cast<std::ptrdiff_t>(std::floor(px));
            const double fy = py - static_cast<double>(y0);
            const double fx = px - static_cast<double>(x0);
            const std::array<std::ptrdiff_t, 2> ys{y0, y0 + 1};
            const std::array<std::ptrdiff_t, 2> xs{x0, x0 + 1};
            const std::array<double, 2> wy{1.0 - fy, fy};
            const std::array<double, 2> wx{1.0 - fx, fx};

            for (std::size_t k = 0; k < d.z; ++k) {
                double acc = 0.0;
                for (int a = 0; a < 2; ++a) {
                    if (ys[a] < 0 || ys[a] >= H || wy[a] == 0.0) continue;
                    for (int b = 0; b < 2; ++b) {
                        if (xs[b] < 0 || xs[b] >= W || wx[b] == 0.0) continue;
                        acc += wy[a] * wx[b] *
                               s.image(k, static_cast<std::size_t>(ys[a]), static_cast<std::size_t>(xs[b]));
                    }
                }
                out.image(k, i, j) = static_cast<float>(acc);
                if (nearest_in) {
                    out.labels(k, i, j) = s.labels(k, static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
                }
            }
        }
    }
    return out;
}

DeformParams draw_params(Rng& rng, double p_apply, const DeformLimits& limits) {
    DeformParams p;
    p.apply = rng.bernoulli(p_apply);
    if (p.apply) {
        p.rotation = rng.uniform(-limits.rotation_max, limits.rotation_max);
        p.shear = rng.uniform(-limits.shear_max, limits.shear_max);
        p.projective = rng.uniform(-limits.projective_max, limits.projective_max);
    }
    return p;
}

Slab augment(const Slab& s, const AugmentConfig& cfg, Rng& rng) {
    Slab out = cfg.flip_p > 0.0 ? random_flip(s, cfg.flip_p, rng) : s;
    if (cfg.deform_p > 0.0) out = projective_deform(out, draw_params(rng, cfg.deform_p, cfg.limits));
    return out;
}

}  // namespace alamo::augment
