// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "alamo/infer.hpp"
#include "alamo/metrics.hpp"
#include "alamo/nn/checkpoint.hpp"
#include "alamo/nn/model.hpp"
#include "alamo/phantom.hpp"
#include "alamo/rng.hpp"
#include "alamo/train.hpp"
#include "alamo/verify.hpp"
#include "oracles.hpp"

using namespace alamo;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

/// Failing checks of a report, or "all N checks pass".
Outcome from_report(const verify::Report& r, std::size_t min_samples = 0) {
    std::string failed;
    bool ok = r.passed();
    for (const auto& c : r.checks) {
        if (!c.passed || c.samples < min_samples) {
            ok = false;
            failed += " " + c.suite + "/" + c.name + "(" + fmt("%.3g", c.value) + ", n=" + std::to_string(c.samples) +
                      ")";
        }
    }
    if (ok) return {true, "all " + std::to_string(r.checks.size()) + " checks pass"};
    return {false, "failing:" + failed};
}

// ---------------------------------------------------------------------------
// Shared overfit setup.

train::RunConfig overfit_config(nn::NormMode norm, nn::BnInference bn, std::uint64_t steps) {
    train::RunConfig rc;
    rc.model.arch = nn::Arch::Dense;
    rc.model.k = 4;
    rc.model.depth = 2;
    rc.model.layers_per_block = 2;
    rc.model.slab = 4;
    rc.model.norm = norm;
    rc.model.bn_inference = bn;
    rc.augment.flip_p = 0.0;
    rc.augment.deform_p = 0.0;
    rc.augment.slab = {4, 64, 64};
    rc.train.lr0 = 3e-3;
    rc.train.max_steps = steps;
    rc.train.checkpoint_every = 0;
    rc.train.seed = 0;
    return rc;
}

struct Phantom {
    Volume image;
    LabelMap labels;
    Case prepared;
};

Phantom make_phantom(std::uint64_t seed) {
    auto [v, l] = phantom::generate(phantom::default_spec({24, 64, 64}, 4, seed));
    Phantom p{v, l, {}};
    p.prepared = train::prepare_case(Case{"p" + std::to_string(seed), v, l}, 1.2);
    return p;
}

/// Mean DSC over the foreground classes present in the ground truth.
double foreground_dsc(const LabelMap& pred, const LabelMap& gt) {
    std::vector<bool> present(kClassCount, false);
    for (ClassId c : gt.voxels.storage()) present[c] = true;
    double sum = 0.0;
    int n = 0;
    for (const auto& m : metrics::evaluate(pred, gt)) {
        if (present[static_cast<std::size_t>(m.class_id)]) {
            sum += m.dsc;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

/// Mean voxelwise cross-entropy of the transversal view against the labels.
double transversal_ce(const nn::Network<float>& net, const Phantom& p) {
    const ProbMap probs =
        infer::predict_view(net, resample_isotropic(standardize(p.image), 1.2), ViewAxis::Transversal);
    const auto& lab = p.labels.voxels.storage();
    double ce = 0.0;
    for (std::size_t i = 0; i < lab.size(); ++i) {
        ce -= std::log(std::max(1e-30, static_cast<double>(probs.classes[lab[i]].storage()[i])));
    }
    return ce / static_cast<double>(lab.size());
}

bool all_finite(const std::vector<train::LossRecord>& trace) {
    return std::all_of(trace.begin(), trace.end(), [](const auto& r) { return std::isfinite(r.train_loss); });
}

const Phantom& train_phantom() {
    static const Phantom p = make_phantom(0);
    return p;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    return from_report(verify::gradcheck_suite({}), 50);
}

Outcome metric_oracles() { return from_report(verify::metrics_suite(0, 200)); }

Outcome overfit() {
    const Phantom& p = train_phantom();
    const auto cfg = overfit_config(nn::NormMode::None, nn::BnInference::TrainStats, 1500);
    const auto res = train::train_loop({p.prepared}, {}, cfg);
    const auto net = nn::restore_network(res.checkpoint);

    infer::PredictOptions opt;
    const double dsc = foreground_dsc(infer::predict_full(net, p.image, opt).labels, p.labels);
    const double ce = transversal_ce(net, p);

    const auto again = train::train_loop({p.prepared}, {}, overfit_config(nn::NormMode::None, nn::BnInference::TrainStats, 200));
    const bool same = std::equal(again.trace.begin(), again.trace.end(), res.trace.begin());

    return {dsc >= 0.95 && ce < 0.05 && same && all_finite(res.trace),
            "vote DSC " + fmt("%.4f", dsc) + " (>= 0.95), CE " + fmt("%.4f", ce) + " (< 0.05), rerun prefix " +
                (same ? "identical" : "DIFFERS")};
}

Outcome fusion() { return from_report(verify::fusion_suite(0)); }

Outcome architecture_economy() {
    nn::ModelConfig dense;
    dense.arch = nn::Arch::Dense;
    dense.k = 48;
    nn::ModelConfig plain;
    plain.arch = nn::Arch::Plain;
    plain.f = 64;
    const std::size_t nd = nn::count_params(dense);
    const std::size_t np = nn::count_params(plain);
    const bool oracle = nd == oracle::closed_form_params(dense) && np == oracle::closed_form_params(plain);
    const double ratio = static_cast<double>(np) / static_cast<double>(nd);
    return {ratio >= 10.0 && oracle, "Dense k=48 " + std::to_string(nd) + ", Plain f=64 " + std::to_string(np) +
                                         ", ratio " + fmt("%.2f", ratio) + " (>= 10), closed form " +
                                         (oracle ? "matches" : "DIFFERS")};
}

Outcome normalization_modes() {
    const Phantom& p = train_phantom();
    const Phantom held = make_phantom(1);
    struct ModeRun {
        const char* name;
        nn::NormMode norm;
        nn::BnInference bn;
    };
    const std::vector<ModeRun> modes{{"none", nn::NormMode::None, nn::BnInference::TrainStats},
                                     {"bn-train", nn::NormMode::BN, nn::BnInference::TrainStats},
                                     {"bn-running", nn::NormMode::BN, nn::BnInference::RunningStats},
                                     {"in", nn::NormMode::IN, nn::BnInference::TrainStats},
                                     {"ln", nn::NormMode::LN, nn::BnInference::TrainStats}};
    bool ok = true;
    std::string detail;
    nn::Checkpoint bn_ckp;
    for (const auto& m : modes) {
        train::TrainResult res;
        try {
            res = train::train_loop({p.prepared}, {}, overfit_config(m.norm, m.bn, 1500));
        } catch (const std::exception& e) {
            ok = false;
            detail += std::string(m.name) + " threw (" + e.what() + "); ";
            continue;
        }
        const bool finite = res.trace.size() == 1500 && all_finite(res.trace);
        ok = ok && finite;
        detail += std::string(m.name) + (finite ? " finite" : " NON-FINITE") + " last " +
                  fmt("%.4f", res.trace.back().train_loss) + "; ";
        if (m.bn == nn::BnInference::RunningStats) bn_ckp = res.checkpoint;
    }
    if (bn_ckp.parameters.empty()) return {false, detail + "no BN checkpoint"};

    const Volume iso = resample_isotropic(standardize(held.image), 1.2);
    nn::Checkpoint train_stats = bn_ckp;
    train_stats.config.bn_inference = nn::BnInference::TrainStats;
    const ProbMap a = infer::predict_view(nn::restore_network(bn_ckp), iso, ViewAxis::Transversal);
    const ProbMap b = infer::predict_view(nn::restore_network(train_stats), iso, ViewAxis::Transversal);
    double diff = 0.0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
        for (std::size_t i = 0; i < a.classes[c].size(); ++i) {
            diff = std::max(diff, std::abs(static_cast<double>(a.classes[c].storage()[i]) - b.classes[c].storage()[i]));
        }
    }
    ok = ok && diff > 1e-6;
    return {ok, detail + "held-out BN max prob diff " + fmt("%.3g", diff) + " (> 1e-6)"};
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism() {
    const Phantom& p = train_phantom();
    auto cfg = overfit_config(nn::NormMode::BN, nn::BnInference::RunningStats, 200);
    cfg.augment = augment::AugmentConfig{};
    cfg.augment.slab = {4, 64, 64};
    cfg.train.checkpoint_every = 100;

    nn::Checkpoint mid;
    train::TrainHooks hooks;
    hooks.on_checkpoint = [&](std::uint64_t done, const nn::Checkpoint& c) {
        if (done == 100) mid = c;
    };
    const auto a = train::train_loop({p.prepared}, {}, cfg, nullptr, hooks);
    const auto b = train::train_loop({p.prepared}, {}, cfg);
    const bool traces = a.trace == b.trace && a.checkpoint == b.checkpoint;

    const auto dir = oracle::temp_dir("acceptance");
    nn::save_checkpoint(dir / "mid.ckpt", mid);
    const nn::Checkpoint loaded = nn::load_checkpoint(dir / "mid.ckpt");
    nn::save_checkpoint(dir / "mid2.ckpt", loaded);
    const bool ckp_rt = loaded == mid && file_bytes(dir / "mid.ckpt") == file_bytes(dir / "mid2.ckpt");

    const auto r = train::train_loop({p.prepared}, {}, cfg, &loaded);
    const bool resumed = r.trace.size() == 100 && std::equal(r.trace.begin(), r.trace.end(), a.trace.begin() + 100) &&
                         r.checkpoint == a.checkpoint;

    Rng rng(7);
    Volume v{Grid3<float>(Dims3{5, 7, 3}), Spacing{0.7, 1.3, 2.9}};
    for (auto& x : v.voxels.storage()) x = static_cast<float>(rng.normal());
    LabelMap l{Grid3<ClassId>(Dims3{5, 7, 3}), Spacing{0.7, 1.3, 2.9}};
    for (auto& x : l.voxels.storage()) x = static_cast<ClassId>(rng.uniform_int(0, 10));
    save_volume(v, dir / "v.mvol");
    save_labels(l, dir / "l.mvol");
    const Volume v2 = load_volume(dir / "v.mvol");
    const LabelMap l2 = load_labels(dir / "l.mvol");
    save_volume(v2, dir / "v2.mvol");
    save_labels(l2, dir / "l2.mvol");
    const bool mvol = v2.voxels.storage() == v.voxels.storage() && v2.spacing == v.spacing &&
                      l2.voxels.storage() == l.voxels.storage() && l2.spacing == l.spacing &&
                      file_bytes(dir / "v.mvol") == file_bytes(dir / "v2.mvol") &&
                      file_bytes(dir / "l.mvol") == file_bytes(dir / "l2.mvol");
    std::filesystem::remove_all(dir);

    auto word = [](bool b) { return b ? "ok" : "FAILED"; };
    return {traces && ckp_rt && resumed && mvol, std::string("same-seed traces ") + word(traces) + ", checkpoint " +
                                                     word(ckp_rt) + ", resume 100 steps " + word(resumed) +
                                                     ", mvol " + word(mvol)};
}

Outcome schedule_and_adam() {
    const train::TrainConfig tc;
    const bool lr = train::lr_at(tc, 0) == 1e-4 && train::lr_at(tc, 50000) == 9e-5 &&
                    train::lr_at(tc, 149999) == 8.1e-5;

    Rng rng(3);
    nn::TensorMap<double> params, grads, m, v;
    params["w"] = nn::Tensor<double>({4, 5});
    grads["w"] = nn::Tensor<double>({4, 5});
    m["w"] = nn::Tensor<double>({4, 5});
    v["w"] = nn::Tensor<double>({4, 5});
    for (auto& x : params["w"].values()) x = rng.normal();
    for (auto& x : grads["w"].values()) x = rng.normal();
    const nn::Tensor<double> before = params["w"];
    std::uint64_t t = 0;
    const double step_lr = 1e-3;
    train::adam_step(params, grads, m, v, t, step_lr);
    double err = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double g = grads["w"].values()[i];
        const double want = before.values()[i] - step_lr * g / (std::abs(g) + train::AdamState::eps);
        err = std::max(err, std::abs(params["w"].values()[i] - want));
    }
    return {lr && err <= 1e-12 && t == 1, std::string("lr_at ") + (lr ? "exact" : "INEXACT") +
                                              ", first Adam step max error " + fmt("%.3g", err) + " (<= 1e-12)"};
}

Outcome wilcoxon() {
    const std::vector<double> a{1.1, 2.2, 3.3, 4.4, 5.5, 6.6};
    const std::vector<double> b{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    const double p = metrics::paired_test(a, b);
    const double pe = metrics::paired_test(a, a);
    const double oracle_p = oracle::wilcoxon_enumerated(a, b);
    return {p == 0.03125 && pe == 1.0 && oracle_p == 0.03125,
            "all-positive n=6 p " + fmt("%.17g", p) + " (0.03125), A=B p " + fmt("%.17g", pe) + " (1)"};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {"gradient integrity", 120, gradient_integrity},
        {"metric oracle equivalence", 60, metric_oracles},
        {"overfit single phantom", 600, overfit},
        {"multi-view fusion", 10, fusion},
        {"architecture economy", 1, architecture_economy},
        {"normalization modes", 1800, normalization_modes},
        {"determinism and round trips", 300, determinism},
        {"lr schedule and adam", 1, schedule_and_adam},
        {"wilcoxon exactness", 1, wilcoxon},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s < c.limit_s;
        const bool pass = o.passed && in_time;
        if (!pass) ++failures;
        std::cout << (pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << c.name << ": " << o.detail << " ["
                  << fmt("%.1f", s) << " s, limit " << c.limit_s << " s" << (in_time ? "" : ", OVER LIMIT") << "]"
                  << std::endl;
    }
    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
