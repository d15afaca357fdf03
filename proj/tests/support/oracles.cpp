#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unistd.h>

namespace alamo::oracle {

std::vector<double> naive_conv(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                               const std::vector<double>& k, std::size_t cout, std::size_t ks,
                               const std::vector<double>& bias, std::size_t stride, std::size_t pad) {
    const std::size_t oh = (h + 2 * pad - ks) / stride + 1;
    const std::size_t ow = (w + 2 * pad - ks) / stride + 1;
    std::vector<double> out(cout * oh * ow, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t ky = 0; ky < ks; ++ky) {
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                            const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            acc += x[(c * h + iy) * w + ix] * k[((o * cin + c) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    return out;
}

std::size_t closed_form_params(const nn::ModelConfig& cfg) {
    const std::size_t L = cfg.layers_per_block;
    const std::size_t out = cfg.class_count * (cfg.slab_out == nn::SlabOut::AllSlices ? cfg.slab : 1);
    const std::size_t norm = cfg.norm == nn::NormMode::None ? 0 : 2;
    // conv with bias plus optional affine normalization
    auto unit = [&](std::size_t cin, std::size_t cout, std::size_t ks) { return cin * cout * ks * ks + cout + norm * cout; };
    auto head = [&](std::size_t cin) { return cin * out + out; };
    auto up = [](std::size_t cin, std::size_t cout) { return cin * cout * 4 + cout; };
    std::size_t n = 0;
    if (cfg.arch == nn::Arch::Dense) {
        const std::size_t k = cfg.k;
        const std::size_t block_out = 2 * k + L * k;    // input 2k plus L growth layers
        const std::size_t dec_out = 4 * k + 2 * L * k;  // up (2k) + skip (block_out) + L growth layers
        auto block = [&](std::size_t cin) {
            std::size_t s = 0;
            for (std::size_t j = 0; j < L; ++j) s += unit(cin + j * k, k, 3);
            return s;
        };
        n += unit(cfg.slab, 2 * k, 3);
        n += cfg.depth * (block(2 * k) + unit(block_out, 2 * k, 1));
        n += block(2 * k);
        for (std::size_t l = cfg.depth; l-- > 0;) {
            n += up(l + 1 == cfg.depth ? block_out : dec_out, 2 * k);
            n += block(2 * k + block_out);
            if (cfg.aux_heads && l >= 1) n += head(dec_out);
        }
        n += head(dec_out);
    } else {
        auto width = [&](std::size_t l) { return cfg.f << l; };
        auto block = [&](std::size_t cin, std::size_t w) { return unit(cin, w, 3) + (L - 1) * unit(w, w, 3); };
        n += unit(cfg.slab, cfg.f, 3);
        for (std::size_t l = 0; l < cfg.depth; ++l) n += block(l == 0 ? cfg.f : width(l - 1), width(l));
        n += block(width(cfg.depth - 1), width(cfg.depth));
        for (std::size_t l = cfg.depth; l-- > 0;) {
            n += up(width(l + 1), width(l));
            n += block(2 * width(l), width(l));
            if (cfg.aux_heads && l >= 1) n += head(width(l));
        }
        n += head(width(0));
    }
    return n;
}

Overlap overlap(const metrics::Mask& a, const metrics::Mask& b) {
    Overlap o;
    for (std::size_t i = 0; i < a.size(); ++i) {
        o.a += a.storage()[i] != 0;
        o.b += b.storage()[i] != 0;
        o.both += a.storage()[i] != 0 && b.storage()[i] != 0;
    }
    return o;
}

std::vector<metrics::Point> surface_points(const metrics::Mask& m, Spacing s) {
    const Dims3 d = m.dims();
    auto on = [&](long z, long y, long x) {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<long>(d.z) || y >= static_cast<long>(d.y) ||
            x >= static_cast<long>(d.x))
            return false;
        return m(z, y, x) != 0;
    };
    std::vector<metrics::Point> pts;
    for (long z = 0; z < static_cast<long>(d.z); ++z) {
        for (long y = 0; y < static_cast<long>(d.y); ++y) {
            for (long x = 0; x < static_cast<long>(d.x); ++x) {
                if (!on(z, y, x)) continue;
                if (!on(z - 1, y, x) || !on(z + 1, y, x) || !on(z, y - 1, x) || !on(z, y + 1, x) ||
                    !on(z, y, x - 1) || !on(z, y, x + 1)) {
                    pts.push_back({z * s.z, y * s.y, x * s.x});
                }
            }
        }
    }
    return pts;
}

std::vector<double> all_pairs_distances(const metrics::Mask& a, const metrics::Mask& b, Spacing s) {
    const auto pa = surface_points(a, s);
    const auto pb = surface_points(b, s);
    std::vector<double> out;
    auto directed = [&](const std::vector<metrics::Point>& from, const std::vector<metrics::Point>& to) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                best = std::min(best, std::hypot(p[0] - q[0], p[1] - q[1], p[2] - q[2]));
            }
            out.push_back(best);
        }
    };
    directed(pa, pb);
    directed(pb, pa);
    std::sort(out.begin(), out.end());
    return out;
}

double wilcoxon_enumerated(std::span<const double> a, std::span<const double> b) {
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    }
    const std::size_t n = d.size();
    if (n == 0) return 1.0;
    if (n > 20) throw std::invalid_argument("enumeration limited to 20 pairs");
    // Average ranks of |d|.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = (static_cast<double>(i + j) + 2.0) / 2.0;
        i = j + 1;
    }
    double w = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (d[i] > 0) w += rank[i];
    }
    const double mean = total / 2.0;
    const double obs = std::abs(w - mean);
    std::size_t extreme = 0;
    const std::size_t count = std::size_t{1} << n;
    for (std::size_t mask = 0; mask < count; ++mask) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1) s += rank[i];
        }
        if (std::abs(s - mean) >= obs - 1e-9) ++extreme;
    }
    return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(count));
}

std::filesystem::path temp_dir(const std::string& tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("alamo_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace alamo::oracle
