#include "alamo/infer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdlib>
#include <future>
#include <stdexcept>
#include <thread>

namespace alamo::infer {

using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

/// Symmetric reflection into [0, n): ... b a | a b c | c b ...
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto p = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t r = i % p;
    if (r < 0) r += p;
    return static_cast<std::size_t>(r < static_cast<std::ptrdiff_t>(n) ? r : p - 1 - r);
}

void check_same(const ProbMap& a, const ProbMap& b) {
    if (!(a.dims() == b.dims()) || a.classes.size() != kClassCount || b.classes.size() != kClassCount) {
        throw ShapeError("fusion inputs differ in dims or class count");
    }
}

double sum3(float a, float b, float c) {
    std::array<double, 3> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[0] + v[1] + v[2];
}

/// Runs the network on one [S][H][W] slab already padded to the spatial multiple.
Tensor<float> run_slab(const nn::Network<float>& net, Tensor<float> slab) {
    Tape<float> tape(false);
    const Var in = tape.leaf(std::move(slab));
    const auto fwd = net.forward(tape, in, nn::Mode::Inference);
    return tape.value(fwd.probs);
}

}  // namespace

std::vector<std::size_t> slab_starts(std::size_t n, std::size_t S, std::size_t stride) {
    if (S == 0 || n < S) throw std::invalid_argument("slab_starts: need n >= S >= 1");
    if (stride == 0) stride = S;
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + S <= n; s += stride) starts.push_back(s);
    if (starts.back() + S < n) starts.push_back(n - S);
    return starts;
}

ProbMap predict_view(const nn::Network<float>& net, const Volume& v, ViewAxis view, std::size_t stride) {
    const nn::ModelConfig& cfg = net.config();
    const Grid3<float> r = reslice(v.voxels, view);
    const Dims3 d = r.dims();
    if (d.empty()) throw ShapeError("predict_view: empty volume");
    const std::size_t S = cfg.slab;
    const std::size_t K = cfg.class_count;
    const std::size_t m = cfg.spatial_multiple();
    const std::size_t H = (d.y + m - 1) / m * m;
    const std::size_t W = (d.x + m - 1) / m * m;
    const std::size_t oy = (H - d.y) / 2;
    const std::size_t ox = (W - d.x) / 2;

    // Builds the padded network input whose slice j is source slice src(j).
    auto make_input = [&](auto&& src) {
        Tensor<float> t({S, H, W});
        for (std::size_t j = 0; j < S; ++j) {
            const std::size_t z = src(j);
            for (std::size_t y = 0; y < d.y; ++y) {
                const float* row = &r(z, y, 0);
                std::copy(row, row + d.x, &t.at(j, y + oy, ox));
            }
        }
        return t;
    };

    // Accumulated class probabilities [n][K][y][x] and per-slice hit counts.
    std::vector<double> acc(d.z * K * d.y * d.x, 0.0);
    std::vector<std::size_t> hits(d.z, 0);
    auto accumulate = [&](const Tensor<float>& probs, std::size_t group, std::size_t z) {
        for (std::size_t c = 0; c < K; ++c) {
            for (std::size_t y = 0; y < d.y; ++y) {
                const float* p = &probs.at(group * K + c, y + oy, ox);
                double* a = &acc[((z * K + c) * d.y + y) * d.x];
                for (std::size_t x = 0; x < d.x; ++x) a[x] += p[x];
            }
        }
        ++hits[z];
    };

    if (cfg.slab_out == nn::SlabOut::CenterSlice) {
        const auto half = static_cast<std::ptrdiff_t>((S - 1) / 2);
        for (std::size_t z = 0; z < d.z; ++z) {
            const auto base = static_cast<std::ptrdiff_t>(z) - half;
            accumulate(run_slab(net, make_input([&](std::size_t j) {
                           return reflect(base + static_cast<std::ptrdiff_t>(j), d.z);
                       })),
                       0, z);
        }
    } else if (d.z < S) {
        const auto before = static_cast<std::ptrdiff_t>((S - d.z) / 2);
        const Tensor<float> probs = run_slab(net, make_input([&](std::size_t j) {
            return reflect(static_cast<std::ptrdiff_t>(j) - before, d.z);
        }));
        for (std::size_t z = 0; z < d.z; ++z) accumulate(probs, z + static_cast<std::size_t>(before), z);
    } else {
        for (std::size_t s0 : slab_starts(d.z, S, stride)) {
            const Tensor<float> probs = run_slab(net, make_input([&](std::size_t j) { return s0 + j; }));
            for (std::size_t j = 0; j < S; ++j) accumulate(probs, j, s0 + j);
        }
    }

    ProbMap out(d, v.spacing);
    const std::size_t plane = d.y * d.x;
    for (std::size_t z = 0; z < d.z; ++z) {
        for (std::size_t i = 0; i < plane; ++i) {
            double total = 0.0;
            for (std::size_t c = 0; c < K; ++c) total += acc[(z * K + c) * plane + i];
            for (std::size_t c = 0; c < K; ++c) {
                out.classes[c].storage()[z * plane + i] = static_cast<float>(acc[(z * K + c) * plane + i] / total);
            }
        }
    }
    return unreslice(out, view);
}

LabelMap fuse_majority(const ProbMap& p_t, const ProbMap& p_c, const ProbMap& p_s) {
    check_same(p_t, p_c);
    check_same(p_t, p_s);
    const LabelMap a = p_t.argmax();
    const LabelMap b = p_c.argmax();
    const LabelMap c = p_s.argmax();
    LabelMap out{Grid3<ClassId>(p_t.dims()), p_t.spacing};
    const std::size_t n = out.voxels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const ClassId va = a.voxels.storage()[i];
        const ClassId vb = b.voxels.storage()[i];
        const ClassId vc = c.voxels.storage()[i];
        ClassId win;
        if (va == vb || va == vc) {
            win = va;
        } else if (vb == vc) {
            win = vb;
        } else {
            std::array<ClassId, 3> cand{va, vb, vc};
            std::sort(cand.begin(), cand.end());
            win = cand[0];
            double best = -1.0;
            for (ClassId k : cand) {
                const double s = sum3(p_t.classes[k].storage()[i], p_c.classes[k].storage()[i],
                                      p_s.classes[k].storage()[i]);
                if (s > best) {
                    best = s;
                    win = k;
                }
            }
        }
        out.voxels.storage()[i] = win;
    }
    return out;
}

LabelMap fuse_soft(const ProbMap& p_t, const ProbMap& p_c, const ProbMap& p_s) {
    check_same(p_t, p_c);
    check_same(p_t, p_s);
    LabelMap out{Grid3<ClassId>(p_t.dims()), p_t.spacing};
    const std::size_t n = out.voxels.size();
    for (std::size_t i = 0; i < n; ++i) {
        ClassId win = 0;
        double best = -1.0;
        for (std::size_t k = 0; k < kClassCount; ++k) {
            const double s =
                sum3(p_t.classes[k].storage()[i], p_c.classes[k].storage()[i], p_s.classes[k].storage()[i]);
            if (s > best) {
                best = s;
                win = static_cast<ClassId>(k);
            }
        }
        out.voxels.storage()[i] = win;
    }
    return out;
}

FuseSpec parse_fuse(std::string_view s) {
    if (s == "vote") return {FuseMode::Vote, ViewAxis::Transversal};
    if (s == "soft") return {FuseMode::Soft, ViewAxis::Transversal};
    if (s.substr(0, 7) == "single:") return {FuseMode::Single, parse_view(s.substr(7))};
    throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "' (expected vote, soft or single:<view>)");
}

std::string to_string(const FuseSpec& f) {
    switch (f.mode) {
        case FuseMode::Vote: return "vote";
        case FuseMode::Soft: return "soft";
        case FuseMode::Single: return "single:" + std::string(view_name(f.single).substr(0, 1));
    }
    return "?";
}

void PredictOptions::validate() const {
    if (views.empty()) throw std::invalid_argument("at least one view is required");
    for (std::size_t i = 0; i < views.size(); ++i) {
        for (std::size_t j = i + 1; j < views.size(); ++j) {
            if (views[i] == views[j]) throw std::invalid_argument("duplicate view in view list");
        }
    }
    if (fuse.mode == FuseMode::Single) {
        if (std::find(views.begin(), views.end(), fuse.single) == views.end()) {
            throw std::invalid_argument("single-view fusion needs its view in the view list");
        }
    } else if (views.size() != 3) {
        throw std::invalid_argument("vote and soft fusion need all three views");
    }
    if (!(target_spacing_mm > 0.0)) throw std::invalid_argument("target spacing must be > 0");
}

unsigned thread_limit(unsigned requested) {
    unsigned n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("ALAMO_THREADS")) {
            char* end = nullptr;
            const unsigned long v = std::strtoul(env, &end, 10);
            if (end != env && *end == '\0') n = static_cast<unsigned>(v);
        }
    }
    if (n == 0) n = std::thread::hardware_concurrency();
    return std::max(1u, n);
}

Prediction predict_full(const nn::Network<float>& net, const Volume& v, const PredictOptions& opt) {
    opt.validate();
    const Volume iso = resample_isotropic(standardize(v), opt.target_spacing_mm);

    std::vector<ViewAxis> views = opt.views;
    if (opt.fuse.mode == FuseMode::Single && !opt.keep_probs) views = {opt.fuse.single};

    struct Job {
        ProbMap probs;
        double seconds = 0.0;
    };
    auto run = [&](ViewAxis view) {
        const auto t0 = std::chrono::steady_clock::now();
        Job j{predict_view(net, iso, view, opt.stride), 0.0};
        j.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return j;
    };

    std::map<ViewAxis, Job> done;
    const unsigned workers = thread_limit(opt.threads);
    for (std::size_t i = 0; i < views.size(); i += workers) {
        std::vector<std::pair<ViewAxis, std::future<Job>>> batch;
        for (std::size_t k = i; k < std::min(views.size(), i + workers); ++k) {
            const auto policy = workers == 1 ? std::launch::deferred : std::launch::async;
            batch.emplace_back(views[k], std::async(policy, run, views[k]));
        }
        for (auto& [view, fut] : batch) done.emplace(view, fut.get());
    }

    LabelMap fused;
    switch (opt.fuse.mode) {
        case FuseMode::Single: fused = done.at(opt.fuse.single).probs.argmax(); break;
        case FuseMode::Vote:
            fused = fuse_majority(done.at(ViewAxis::Transversal).probs, done.at(ViewAxis::Coronal).probs,
                                  done.at(ViewAxis::Sagittal).probs);
            break;
        case FuseMode::Soft:
            fused = fuse_soft(done.at(ViewAxis::Transversal).probs, done.at(ViewAxis::Coronal).probs,
                              done.at(ViewAxis::Sagittal).probs);
            break;
    }

    Prediction out;
    out.labels = resample_labels_to(fused, v.dims(), v.spacing);
    for (auto& [view, job] : done) {
        out.seconds[view] = job.seconds;
        if (opt.keep_probs) out.probs.emplace(view, std::move(job.probs));
    }
    return out;
}

}  // namespace alamo::infer
