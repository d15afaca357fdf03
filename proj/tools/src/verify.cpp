#include "alamo/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>

#include "alamo/infer.hpp"
#include "alamo/metrics.hpp"
#include "alamo/nn/model.hpp"
#include "alamo/rng.hpp"
#include "alamo/train.hpp"

namespace alamo::verify {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

bool Report::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

void Report::append(const Report& other) { checks.insert(checks.end(), other.checks.begin(), other.checks.end()); }

void Report::print(std::ostream& os) const {
    char buf[512];
    for (const auto& c : checks) {
        std::snprintf(buf, sizeof buf, "%s %-10s %-28s value=%.3e tol=%.1e samples=%zu", c.passed ? "PASS" : "FAIL",
                      c.suite.c_str(), c.name.c_str(), c.value, c.tolerance, c.samples);
        os << buf;
        if (!c.detail.empty()) os << "  " << c.detail;
        os << '\n';
    }
    std::size_t failed = 0;
    for (const auto& c : checks) failed += !c.passed;
    os << (failed == 0 ? "all " : "") << checks.size() - failed << "/" << checks.size() << " checks passed\n";
}

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

/// A scalar loss over a set of mutable double tensors.
struct GradCase {
    std::string name;
    std::vector<Tensor<double>*> coords;
    /// Returns the loss and the tape variable of every coordinate tensor.
    std::function<std::pair<Var, std::vector<Var>>(Tape<double>&)> build;
};

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
}

/// Fixed random weights for the probe loss sum(out * W), created on first use.
/// Weights have variance 1/N so the loss stays O(1) whatever the output size.
struct Probe {
    std::uint64_t seed;
    std::shared_ptr<Tensor<double>> weights = std::make_shared<Tensor<double>>();

    Var operator()(Tape<double>& tape, Var out) const {
        if (weights->shape() != tape.value(out).shape()) {
            Rng rng(seed);
            const auto n = static_cast<double>(tape.value(out).size());
            *weights = random_tensor(tape.value(out).shape(), rng, 1.0 / std::sqrt(n));
        }
        return nn::weighted_sum(tape, out, *weights);
    }
};

CheckResult run_case(const GradCase& gc, const GradcheckOptions& opt, std::uint64_t sample_seed) {
    Tape<double> tape(true);
    auto [loss, vars] = gc.build(tape);
    tape.backward(loss);
    std::vector<Tensor<double>> analytic;
    for (Var v : vars) analytic.push_back(tape.grad(v));

    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t i = 0; i < gc.coords.size(); ++i) {
        for (std::size_t j = 0; j < gc.coords[i]->size(); ++j) all.emplace_back(i, j);
    }
    Rng rng(sample_seed);
    const std::size_t n = std::min(opt.samples, all.size());
    for (std::size_t k = 0; k < n; ++k) {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k),
                                                                    static_cast<std::int64_t>(all.size()) - 1));
        std::swap(all[k], all[pick]);
    }

    auto eval = [&] {
        Tape<double> t(false);
        auto r = gc.build(t);
        return t.value(r.first)[0];
    };

    CheckResult res{"gradcheck", gc.name, true, 0.0, opt.tolerance, n, {}};
    for (std::size_t k = 0; k < n; ++k) {
        const auto [i, j] = all[k];
        double& x = (*gc.coords[i])[j];
        const double orig = x;
        x = orig + opt.h;
        const double lp = eval();
        x = orig - opt.h;
        const double lm = eval();
        x = orig;
        const double num = (lp - lm) / (2.0 * opt.h);
        const double a = analytic[i][j];
        const double err = relative_error(a, num);
        if (err > res.value || k == 0) {
            res.value = err;
            char buf[160];
            std::snprintf(buf, sizeof buf, "worst tensor %zu index %zu analytic=%.9g numeric=%.9g", i, j, a, num);
            res.detail = buf;
        }
    }
    res.passed = std::isfinite(res.value) && res.value < opt.tolerance;
    return res;
}

/// Owns the tensors of a layer-level case.
struct LayerCase {
    std::vector<std::unique_ptr<Tensor<double>>> store;

    Tensor<double>* add(Tensor<double> t) {
        store.push_back(std::make_unique<Tensor<double>>(std::move(t)));
        return store.back().get();
    }
    std::vector<Tensor<double>*> coords() const {
        std::vector<Tensor<double>*> out;
        for (const auto& t : store) out.push_back(t.get());
        return out;
    }
};

std::vector<Var> bind(Tape<double>& tape, const std::vector<Tensor<double>*>& coords) {
    std::vector<Var> vars;
    for (const auto* t : coords) vars.push_back(tape.parameter(*t));
    return vars;
}

}  // namespace

Report gradcheck_suite(const GradcheckOptions& opt_in) {
    GradcheckOptions opt = opt_in;
    const ConvOp conv = opt.conv ? opt.conv : ConvOp([](Tape<double>& t, Var x, Var w, Var b, std::size_t s,
                                                        std::size_t p) { return nn::conv2d(t, x, w, b, s, p); });
    std::vector<std::shared_ptr<LayerCase>> owners;
    std::vector<GradCase> cases;
    Rng rng(Rng::derive(opt.seed, 0x6772).next_u64());
    std::uint64_t probe_seed = opt.seed * 1000 + 1;

    // Adds a case whose coordinates are the given tensors and whose output is
    // reduced with a random probe unless `direct_loss` is set.
    auto add = [&](std::string name, std::vector<Tensor<double>> tensors,
                   std::function<Var(Tape<double>&, const std::vector<Var>&)> body, bool direct_loss = false) {
        auto owner = std::make_shared<LayerCase>();
        for (auto& t : tensors) owner->add(std::move(t));
        owners.push_back(owner);
        Probe probe{probe_seed++};
        auto coords = owner->coords();
        cases.push_back({std::move(name), coords,
                         [coords, body, probe, direct_loss](Tape<double>& tape) {
                             auto vars = bind(tape, coords);
                             Var out = body(tape, vars);
                             return std::make_pair(direct_loss ? out : probe(tape, out), vars);
                         }});
    };

    add("conv2d_3x3", {random_tensor({2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
        [conv](Tape<double>& t, const std::vector<Var>& v) { return conv(t, v[0], v[1], v[2], 1, 1); });
    add("conv2d_1x1", {random_tensor({3, 5, 5}, rng), random_tensor({4, 3, 1, 1}, rng), random_tensor({4}, rng)},
        [conv](Tape<double>& t, const std::vector<Var>& v) { return conv(t, v[0], v[1], v[2], 1, 0); });
    add("conv2d_3x3_stride2",
        {random_tensor({2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)},
        [conv](Tape<double>& t, const std::vector<Var>& v) { return conv(t, v[0], v[1], v[2], 2, 1); });
    {
        Tensor<double> x = random_tensor({2, 5, 5}, rng, 2.0);
        for (auto& e : x.values()) {
            if (std::abs(e) < 1e-2) e = 0.5;  // keep samples off the kink
        }
        add("elu", {std::move(x)}, [](Tape<double>& t, const std::vector<Var>& v) { return nn::elu(t, v[0]); });
    }
    add("avg_pool2", {random_tensor({2, 6, 6}, rng)},
        [](Tape<double>& t, const std::vector<Var>& v) { return nn::avg_pool2(t, v[0]); });
    add("conv_transpose2",
        {random_tensor({3, 3, 3}, rng), random_tensor({3, 2, 2, 2}, rng), random_tensor({2}, rng)},
        [](Tape<double>& t, const std::vector<Var>& v) { return nn::conv_transpose2(t, v[0], v[1], v[2]); });
    add("softmax", {random_tensor({22, 3, 3}, rng, 2.0)},
        [](Tape<double>& t, const std::vector<Var>& v) { return nn::softmax_groups(t, v[0], 11); });
    {
        auto labels = std::make_shared<std::vector<std::uint8_t>>(2 * 3 * 3);
        for (auto& l : *labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 10));
        add(
            "softmax_cross_entropy", {random_tensor({22, 3, 3}, rng, 2.0)},
            [labels](Tape<double>& t, const std::vector<Var>& v) {
                return nn::cross_entropy_groups(t, v[0], std::span<const std::uint8_t>(*labels), 11);
            },
            true);
    }
    auto affine = [&](std::size_t c) {
        Tensor<double> s = random_tensor({c}, rng, 0.3);
        for (auto& e : s.values()) e += 1.0;
        return s;
    };
    for (const auto& [name, scope] : {std::pair{"norm_bn_train", nn::StatScope::PerChannel},
                                      std::pair{"norm_in", nn::StatScope::PerChannel},
                                      std::pair{"norm_ln", nn::StatScope::PerSample}}) {
        const std::size_t c = std::string(name) == "norm_in" ? 4 : 3;
        add(name, {random_tensor({c, 4, 4}, rng, 1.5), affine(c), random_tensor({c}, rng)},
            [scope](Tape<double>& t, const std::vector<Var>& v) {
                return nn::normalize_batch(t, v[0], v[1], v[2], scope, 1e-5);
            });
    }
    {
        auto mean = std::make_shared<std::vector<double>>(std::vector<double>{0.3, -0.2, 0.1});
        auto var = std::make_shared<std::vector<double>>(std::vector<double>{1.5, 0.7, 2.0});
        add("norm_bn_running", {random_tensor({3, 4, 4}, rng), affine(3), random_tensor({3}, rng)},
            [mean, var](Tape<double>& t, const std::vector<Var>& v) {
                return nn::normalize_fixed(t, v[0], v[1], v[2], std::span<const double>(*mean),
                                           std::span<const double>(*var), 1e-5);
            });
    }
    // Dense block: 2 units of conv3x3 -> instance norm -> ELU, growth 3, concatenated.
    add("dense_block",
        {random_tensor({2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng, 0.5), random_tensor({3}, rng), affine(3),
         random_tensor({3}, rng), random_tensor({3, 5, 3, 3}, rng, 0.5), random_tensor({3}, rng), affine(3),
         random_tensor({3}, rng)},
        [conv](Tape<double>& t, const std::vector<Var>& v) {
            std::vector<Var> feats{v[0]};
            for (std::size_t j = 0; j < 2; ++j) {
                const Var in = j == 0 ? v[0] : nn::concat_channels(t, feats);
                const std::size_t o = 1 + 4 * j;
                Var y = conv(t, in, v[o], v[o + 1], 1, 1);
                y = nn::normalize_batch(t, y, v[o + 2], v[o + 3], nn::StatScope::PerChannel, 1e-5);
                feats.push_back(nn::elu(t, y));
            }
            return nn::concat_channels(t, feats);
        });
    // Plain block: 2 stacked conv3x3 -> layer norm -> ELU of width 3.
    add("plain_block",
        {random_tensor({2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng, 0.5), random_tensor({3}, rng), affine(3),
         random_tensor({3}, rng), random_tensor({3, 3, 3, 3}, rng, 0.5), random_tensor({3}, rng), affine(3),
         random_tensor({3}, rng)},
        [conv](Tape<double>& t, const std::vector<Var>& v) {
            Var x = v[0];
            for (std::size_t j = 0; j < 2; ++j) {
                const std::size_t o = 1 + 4 * j;
                x = conv(t, x, v[o], v[o + 1], 1, 1);
                x = nn::normalize_batch(t, x, v[o + 2], v[o + 3], nn::StatScope::PerSample, 1e-5);
                x = nn::elu(t, x);
            }
            return x;
        });

    // Assembled networks, differentiated through the training loss.
    std::vector<std::shared_ptr<nn::Network<double>>> nets;
    auto add_network = [&](std::string name, nn::ModelConfig cfg) {
        auto net = std::make_shared<nn::Network<double>>(cfg, opt.seed + 17);
        // Nonzero biases / shifts so every parameter has a generic gradient.
        for (auto& [pname, p] : net->parameters()) {
            for (auto& e : p.values()) e += 0.1 * rng.normal();
        }
        nets.push_back(net);
        auto input = std::make_shared<Tensor<double>>(random_tensor({cfg.slab, 8, 8}, rng));
        auto labels = std::make_shared<Grid3<ClassId>>(Dims3{cfg.slab, 8, 8});
        for (auto& l : labels->storage()) l = static_cast<ClassId>(rng.uniform_int(0, 10));
        std::vector<std::string> names;
        std::vector<Tensor<double>*> coords;
        for (auto& [pname, p] : net->parameters()) {
            names.push_back(pname);
            coords.push_back(&p);
        }
        cases.push_back({std::move(name), coords, [net, input, labels, names](Tape<double>& tape) {
                             const Var in = tape.leaf(*input);
                             const auto fwd = net->forward(tape, in, nn::Mode::Train);
                             const Var loss = train::slab_loss(tape, fwd, *labels, net->config(), 0.25);
                             std::vector<Var> vars;
                             for (const auto& n : names) vars.push_back(fwd.params.at(n));
                             return std::make_pair(loss, vars);
                         }});
    };
    nn::ModelConfig tiny;
    tiny.arch = nn::Arch::Dense;
    tiny.k = 2;
    tiny.depth = 2;
    tiny.layers_per_block = 2;
    tiny.slab = 2;
    add_network("tiny_dense_unet", tiny);
    nn::ModelConfig tiny_bn = tiny;
    tiny_bn.norm = nn::NormMode::BN;
    add_network("tiny_dense_unet_bn", tiny_bn);
    nn::ModelConfig tiny_plain = tiny;
    tiny_plain.arch = nn::Arch::Plain;
    tiny_plain.f = 2;
    tiny_plain.norm = nn::NormMode::LN;
    add_network("tiny_plain_unet_ln", tiny_plain);

    Report report;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        report.checks.push_back(run_case(cases[i], opt, Rng::splitmix64(opt.seed + i)));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Metric oracles: direct voxel counting and all-pairs surface distances.

namespace {

using metrics::Mask;

struct OracleCounts {
    double a = 0, b = 0, both = 0, either = 0;
};

OracleCounts oracle_counts(const Mask& a, const Mask& b) {
    OracleCounts c;
    const Dims3 d = a.dims();
    for (std::size_t z = 0; z < d.z; ++z) {
        for (std::size_t y = 0; y < d.y; ++y) {
            for (std::size_t x = 0; x < d.x; ++x) {
                const bool p = a(z, y, x) != 0;
                const bool q = b(z, y, x) != 0;
                c.a += p;
                c.b += q;
                c.both += p && q;
                c.either += p || q;
            }
        }
    }
    return c;
}

std::vector<std::array<double, 3>> oracle_surface(const Mask& m, Spacing sp) {
    const Dims3 d = m.dims();
    const int D[3] = {static_cast<int>(d.z), static_cast<int>(d.y), static_cast<int>(d.x)};
    static constexpr int kOff[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<std::array<double, 3>> pts;
    for (int z = 0; z < D[0]; ++z) {
        for (int y = 0; y < D[1]; ++y) {
            for (int x = 0; x < D[2]; ++x) {
                if (!m(z, y, x)) continue;
                bool border = false;
                for (const auto& o : kOff) {
                    const int n[3] = {z + o[0], y + o[1], x + o[2]};
                    if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= D[0] || n[1] >= D[1] || n[2] >= D[2] ||
                        !m(n[0], n[1], n[2])) {
                        border = true;
                    }
                }
                if (border) pts.push_back({z * sp.z, y * sp.y, x * sp.x});
            }
        }
    }
    return pts;
}

std::vector<double> oracle_distances(const Mask& a, const Mask& b, Spacing sp) {
    const auto sa = oracle_surface(a, sp);
    const auto sb = oracle_surface(b, sp);
    std::vector<double> out;
    auto directed = [&](const auto& from, const auto& to) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                           (p[2] - q[2]) * (p[2] - q[2]));
                best = std::min(best, d);
            }
            out.push_back(best);
        }
    };
    directed(sa, sb);
    directed(sb, sa);
    return out;
}

double oracle_mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double oracle_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

Mask random_mask(Dims3 d, Rng& rng) {
    Mask m(d);
    if (rng.bernoulli(0.3)) {
        const double p = rng.uniform(0.05, 0.6);
        for (auto& v : m.storage()) v = rng.bernoulli(p);
        return m;
    }
    const int blobs = static_cast<int>(rng.uniform_int(1, 3));
    for (int k = 0; k < blobs; ++k) {
        const double cz = rng.uniform(0, static_cast<double>(d.z));
        const double cy = rng.uniform(0, static_cast<double>(d.y));
        const double cx = rng.uniform(0, static_cast<double>(d.x));
        const double rz = rng.uniform(0.5, 5), ry = rng.uniform(0.5, 5), rx = rng.uniform(0.5, 5);
        for (std::size_t z = 0; z < d.z; ++z) {
            for (std::size_t y = 0; y < d.y; ++y) {
                for (std::size_t x = 0; x < d.x; ++x) {
                    const double u = (static_cast<double>(z) - cz) / rz;
                    const double v = (static_cast<double>(y) - cy) / ry;
                    const double w = (static_cast<double>(x) - cx) / rx;
                    if (u * u + v * v + w * w <= 1.0) m(z, y, x) = 1;
                }
            }
        }
    }
    if (std::find(m.storage().begin(), m.storage().end(), 1) == m.storage().end()) {
        m.storage()[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m.size()) - 1))] = 1;
    }
    return m;
}

/// Exact two-sided signed-rank p-value by enumerating all sign assignments.
double oracle_wilcoxon(const std::vector<double>& d) {
    std::vector<double> nz;
    for (double x : d) {
        if (x != 0) nz.push_back(x);
    }
    const std::size_t n = nz.size();
    if (n == 0) return 1.0;
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(nz[j]) < std::abs(nz[i])) ++less;
            if (std::abs(nz[j]) == std::abs(nz[i])) ++equal;
        }
        rank[i] = less + (equal + 1) / 2;
    }
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (nz[i] > 0) w += rank[i];
    }
    double le = 0, ge = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1) s += rank[i];
        }
        le += s <= w + 1e-9;
        ge += s >= w - 1e-9;
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(total));
}

struct MaxTracker {
    CheckResult r;
    explicit MaxTracker(std::string suite, std::string name, double tol) { r = {suite, name, true, 0.0, tol, 0, {}}; }
    void observe(double dev, const std::string& where = {}) {
        ++r.samples;
        if (!(dev <= r.value)) {
            r.value = dev;
            r.detail = where;
        }
    }
    CheckResult done() {
        r.passed = std::isfinite(r.value) && r.value <= r.tolerance;
        return r;
    }
};

CheckResult boolean_check(std::string suite, std::string name, bool ok, std::string detail = {}) {
    return {std::move(suite), std::move(name), ok, ok ? 0.0 : 1.0, 0.0, 1, std::move(detail)};
}

}  // namespace

Report metrics_suite(std::uint64_t seed, std::size_t pairs) {
    Rng rng(Rng::derive(seed, 0x6d6574).next_u64());
    const std::string S = "metrics";
    MaxTracker dsc_t(S, "dsc_counting", 0.0), jac_t(S, "jaccard_counting", 0.0);
    MaxTracker msd_b(S, "msd_bruteforce", 1e-9), msd_x(S, "msd_transform", 1e-9);
    MaxTracker hd_b(S, "hd95_bruteforce", 1e-9), hd_x(S, "hd95_transform", 1e-9);
    MaxTracker ident(S, "jaccard_dice_identity", 1e-9), scale_t(S, "spacing_scaling", 0.0);
    MaxTracker sym(S, "symmetry", 0.0), order(S, "hd95_le_max_msd_le_hd100", 0.0);

    for (std::size_t k = 0; k < pairs; ++k) {
        const Dims3 d{static_cast<std::size_t>(rng.uniform_int(1, 12)), static_cast<std::size_t>(rng.uniform_int(1, 12)),
                      static_cast<std::size_t>(rng.uniform_int(1, 12))};
        const Spacing sp{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        const Mask a = random_mask(d, rng);
        const Mask b = random_mask(d, rng);
        // Empty-mask conventions.
        const Mask e(d);
        if (metrics::dsc(a, e) != 0.0 || metrics::dsc(e, e) != 1.0 || metrics::jaccard(e, e) != 1.0) {
            dsc_t.observe(1.0, "pair " + std::to_string(k) + " empty");
        }
        const std::string where = "pair " + std::to_string(k);
        const OracleCounts c = oracle_counts(a, b);
        const double want_dsc = c.a + c.b == 0 ? 1.0 : 2.0 * c.both / (c.a + c.b);
        const double want_jac = c.either == 0 ? 1.0 : c.both / c.either;
        const double got_dsc = metrics::dsc(a, b);
        const double got_jac = metrics::jaccard(a, b);
        dsc_t.observe(std::abs(got_dsc - want_dsc), where);
        jac_t.observe(std::abs(got_jac - want_jac), where);
        ident.observe(std::abs(got_jac - got_dsc / (2.0 - got_dsc)), where);
        sym.observe(std::abs(metrics::dsc(b, a) - got_dsc), where);
        const Spacing sp2{2 * sp.z, 2 * sp.y, 2 * sp.x};
        scale_t.observe(std::abs(metrics::dsc(a, b) - got_dsc), where);
        if (c.a == 0 || c.b == 0) continue;

        const auto ref = oracle_distances(a, b, sp);
        const double want_msd = oracle_mean(ref);
        const double want_hd = oracle_percentile(ref, 0.95);
        using metrics::DistanceMethod;
        msd_b.observe(std::abs(metrics::msd(a, b, sp, DistanceMethod::BruteForce) - want_msd), where);
        msd_x.observe(std::abs(metrics::msd(a, b, sp, DistanceMethod::Transform) - want_msd), where);
        const double hb = metrics::hd95(a, b, sp, DistanceMethod::BruteForce);
        hd_b.observe(std::abs(hb - want_hd), where);
        hd_x.observe(std::abs(metrics::hd95(a, b, sp, DistanceMethod::Transform) - want_hd), where);
        // Doubling the spacing is exact in binary floating point.
        scale_t.observe(std::abs(metrics::msd(a, b, sp2, DistanceMethod::BruteForce) -
                                 2.0 * metrics::msd(a, b, sp, DistanceMethod::BruteForce)),
                        where);
        scale_t.observe(std::abs(metrics::hd95(a, b, sp2, DistanceMethod::BruteForce) - 2.0 * hb), where);
        sym.observe(std::abs(metrics::msd(b, a, sp) - metrics::msd(a, b, sp)), where);
        sym.observe(std::abs(metrics::hd95(b, a, sp) - metrics::hd95(a, b, sp)), where);
        const double hmax = *std::max_element(ref.begin(), ref.end());
        const double ms = metrics::msd(a, b, sp);
        order.observe(std::max({0.0, hb - hmax, ms - hmax}), where);
    }
    Report r;
    for (auto* t : {&dsc_t, &jac_t, &msd_b, &msd_x, &hd_b, &hd_x, &ident, &scale_t, &sym, &order}) {
        r.checks.push_back(t->done());
    }

    // Worked examples.
    {
        Mask cube(Dims3{3, 3, 3});
        cube.storage().assign(27, 1);
        r.checks.push_back(boolean_check(S, "cube_surface_26", metrics::surface(cube, {1, 1, 1}).size() == 26));
        Mask p(Dims3{1, 1, 4}), q(Dims3{1, 1, 4});
        p(0, 0, 0) = 1;
        q(0, 0, 3) = 1;
        const double m3 = metrics::msd(p, q, {1, 1, 1});
        const double h3 = metrics::hd95(p, q, {1, 1, 1});
        r.checks.push_back(boolean_check(S, "two_voxels_3mm", m3 == 3.0 && h3 == 3.0));
    }

    // Wilcoxon: closed form and enumeration oracle.
    {
        const std::vector<double> a{1.1, 2.3, 3.6, 4.2, 5.9, 6.4}, zero(6, 0.0);
        const double p6 = metrics::paired_test(a, zero);
        r.checks.push_back({S, "wilcoxon_n6_all_positive", p6 == 0.03125, std::abs(p6 - 0.03125), 0.0, 1, {}});
        r.checks.push_back(boolean_check(S, "wilcoxon_identical", metrics::paired_test(a, a) == 1.0));
        MaxTracker wt(S, "wilcoxon_enumeration", 1e-12);
        for (int k = 0; k < 40; ++k) {
            const auto n = static_cast<std::size_t>(rng.uniform_int(5, 14));
            std::vector<double> x(n), y(n), diff(n);
            for (std::size_t i = 0; i < n; ++i) {
                // Coarse values force tied magnitudes and zero differences.
                x[i] = static_cast<double>(rng.uniform_int(0, 6));
                y[i] = static_cast<double>(rng.uniform_int(0, 6));
                diff[i] = x[i] - y[i];
            }
            const double want = oracle_wilcoxon(diff);
            wt.observe(std::abs(metrics::paired_test(x, y) - want), "trial " + std::to_string(k));
            wt.observe(std::abs(metrics::paired_test(y, x) - want), "swapped trial " + std::to_string(k));
        }
        r.checks.push_back(wt.done());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Fusion properties

namespace {

ProbMap random_probs(Dims3 d, Rng& rng, double sharp = 3.0) {
    ProbMap p(d, {1, 1, 1});
    const std::size_t n = d.count();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        std::array<double, kClassCount> v{};
        for (auto& e : v) {
            e = std::exp(sharp * rng.uniform01());
            sum += e;
        }
        for (std::size_t c = 0; c < kClassCount; ++c) p.classes[c].storage()[i] = static_cast<float>(v[c] / sum);
    }
    return p;
}

/// One-hot-ish map: probability `hi` on `labels`, the rest spread evenly.
ProbMap peaked(const Grid3<ClassId>& labels, double hi) {
    ProbMap p(labels.dims(), {1, 1, 1});
    const double lo = (1.0 - hi) / (kClassCount - 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t c = 0; c < kClassCount; ++c) {
            p.classes[c].storage()[i] = static_cast<float>(c == labels.storage()[i] ? hi : lo);
        }
    }
    return p;
}

ProbMap single_voxel(const std::array<float, kClassCount>& v) {
    ProbMap p(Dims3{1, 1, 1}, {1, 1, 1});
    for (std::size_t c = 0; c < kClassCount; ++c) p.classes[c].storage()[0] = v[c];
    return p;
}

}  // namespace

Report fusion_suite(std::uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x667573).next_u64());
    const std::string S = "fusion";
    Report r;
    const Dims3 d{6, 7, 8};

    {
        const ProbMap p = random_probs(d, rng);
        const LabelMap ref = p.argmax();
        r.checks.push_back(boolean_check(S, "unanimity", infer::fuse_majority(p, p, p).voxels == ref.voxels &&
                                                             infer::fuse_soft(p, p, p).voxels == ref.voxels));
    }
    {
        // Flat maps make three-way splits common.
        const ProbMap a = random_probs(d, rng, 0.5), b = random_probs(d, rng, 0.5), c = random_probs(d, rng, 0.5);
        const LabelMap ref = infer::fuse_majority(a, b, c);
        const LabelMap ref_soft = infer::fuse_soft(a, b, c);
        const std::array<const ProbMap*, 3> in{&a, &b, &c};
        std::array<int, 3> perm{0, 1, 2};
        bool ok = true, ids_ok = true;
        do {
            const auto* x = in[static_cast<std::size_t>(perm[0])];
            const auto* y = in[static_cast<std::size_t>(perm[1])];
            const auto* z = in[static_cast<std::size_t>(perm[2])];
            ok = ok && infer::fuse_majority(*x, *y, *z).voxels == ref.voxels &&
                 infer::fuse_soft(*x, *y, *z).voxels == ref_soft.voxels;
        } while (std::next_permutation(perm.begin(), perm.end()));
        for (ClassId v : ref.voxels.storage()) ids_ok = ids_ok && v < kClassCount;
        r.checks.push_back(boolean_check(S, "permutation_invariance", ok));
        r.checks.push_back(boolean_check(S, "class_ids_in_range", ids_ok));

        // Shared positive per-voxel rescaling, then renormalization.
        auto rescale = [&](const ProbMap& p, const std::vector<double>& f) {
            ProbMap q = p;
            for (std::size_t i = 0; i < d.count(); ++i) {
                double sum = 0;
                for (std::size_t k = 0; k < kClassCount; ++k) sum += q.classes[k].storage()[i] * f[i];
                for (std::size_t k = 0; k < kClassCount; ++k) {
                    q.classes[k].storage()[i] = static_cast<float>(q.classes[k].storage()[i] * f[i] / sum);
                }
            }
            return q;
        };
        std::vector<double> f(d.count());
        for (auto& e : f) e = std::exp2(static_cast<double>(rng.uniform_int(-3, 3)));
        r.checks.push_back(boolean_check(
            S, "argmax_rescale_invariance",
            infer::fuse_majority(rescale(a, f), rescale(b, f), rescale(c, f)).voxels == ref.voxels));
    }
    {
        auto vote = [](int x, int y, int z) {
            std::array<float, kClassCount> pa{}, pb{}, pc{};
            pa[static_cast<std::size_t>(x)] = 1;
            pb[static_cast<std::size_t>(y)] = 1;
            pc[static_cast<std::size_t>(z)] = 1;
            return infer::fuse_majority(single_voxel(pa), single_voxel(pb), single_voxel(pc)).voxels(0, 0, 0);
        };
        r.checks.push_back(boolean_check(S, "votes_5_5_5", vote(5, 5, 5) == 5));
        r.checks.push_back(boolean_check(S, "votes_2_2_7", vote(2, 2, 7) == 2 && vote(2, 7, 2) == 2 &&
                                                               vote(7, 2, 2) == 2));
        // votes (1,2,3); summed probabilities 0.9 / 1.2 / 0.9.
        std::array<float, kClassCount> pa{}, pb{}, pc{};
        pa[1] = 0.5f, pa[2] = 0.4f, pa[0] = 0.1f;
        pb[2] = 0.5f, pb[3] = 0.4f, pb[0] = 0.1f;
        pc[3] = 0.5f, pc[1] = 0.4f, pc[2] = 0.3f;
        r.checks.push_back(boolean_check(
            S, "three_way_split_sum",
            infer::fuse_majority(single_voxel(pa), single_voxel(pb), single_voxel(pc)).voxels(0, 0, 0) == 2));
        // Exact tie of sums goes to the lowest id.
        std::array<float, kClassCount> ta{}, tb{}, tc{};
        ta[4] = 0.5f, ta[6] = 0.25f, ta[8] = 0.25f;
        tb[6] = 0.5f, tb[4] = 0.25f, tb[8] = 0.25f;
        tc[8] = 0.5f, tc[4] = 0.25f, tc[6] = 0.25f;
        bool tie_ok = true;
        const std::array<const std::array<float, kClassCount>*, 3> t{&ta, &tb, &tc};
        std::array<int, 3> perm{0, 1, 2};
        do {
            tie_ok = tie_ok && infer::fuse_majority(single_voxel(*t[static_cast<std::size_t>(perm[0])]),
                                                    single_voxel(*t[static_cast<std::size_t>(perm[1])]),
                                                    single_voxel(*t[static_cast<std::size_t>(perm[2])]))
                                       .voxels(0, 0, 0) == 4;
        } while (std::next_permutation(perm.begin(), perm.end()));
        r.checks.push_back(boolean_check(S, "exact_tie_lowest_id", tie_ok));
    }
    {
        // Two views segment a small-intestine region, the third misses it.
        Grid3<ClassId> gt(Dims3{10, 12, 12});
        for (std::size_t z = 2; z < 8; ++z) {
            for (std::size_t y = 3; y < 9; ++y) {
                for (std::size_t x = 4; x < 10; ++x) gt(z, y, x) = 8;
            }
        }
        Grid3<ClassId> missing = gt;
        for (std::size_t z = 2; z < 5; ++z) {
            for (std::size_t y = 3; y < 9; ++y) {
                for (std::size_t x = 4; x < 10; ++x) missing(z, y, x) = 0;
            }
        }
        const ProbMap good = peaked(gt, 0.8), bad = peaked(missing, 0.7);
        const LabelMap truth{gt, {1, 1, 1}};
        const LabelMap fused = infer::fuse_majority(good, good, bad);
        const double fused_dsc = metrics::dsc(metrics::binarize(fused, 8), metrics::binarize(truth, 8));
        const double bad_dsc = metrics::dsc(metrics::binarize(bad.argmax(), 8), metrics::binarize(truth, 8));
        char buf[96];
        std::snprintf(buf, sizeof buf, "fused dsc %.4f, deficient view dsc %.4f", fused_dsc, bad_dsc);
        r.checks.push_back(boolean_check(S, "dropped_region_recovered", fused_dsc == 1.0 && bad_dsc < 1.0, buf));
    }
    return r;
}

}  // namespace alamo::verify
