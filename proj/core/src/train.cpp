#include "alamo/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>

namespace alamo::train {

using nn::Mode;
using nn::Tape;
using nn::Tensor;
using nn::TensorMap;
using nn::Var;

namespace {

std::string view_code(ViewAxis v) {
    switch (v) {
        case ViewAxis::Transversal: return "t";
        case ViewAxis::Coronal: return "c";
        case ViewAxis::Sagittal: return "s";
    }
    return "?";
}

/// Zero-pads H and W of a [S][H][W] stack symmetrically to multiples of `m`.
template <typename T>
Grid3<T> pad_to_multiple(const Grid3<T>& g, std::size_t m) {
    const Dims3 d = g.dims();
    const std::size_t H = (d.y + m - 1) / m * m;
    const std::size_t W = (d.x + m - 1) / m * m;
    if (H == d.y && W == d.x) return g;
    const std::size_t oy = (H - d.y) / 2;
    const std::size_t ox = (W - d.x) / 2;
    Grid3<T> out(Dims3{d.z, H, W});
    for (std::size_t s = 0; s < d.z; ++s) {
        for (std::size_t y = 0; y < d.y; ++y) {
            for (std::size_t x = 0; x < d.x; ++x) out(s, y + oy, x + ox) = g(s, y, x);
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> TrainConfig::validate() const {
    std::vector<std::string> errs;
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) errs.emplace_back("train.lr0 must be > 0");
    if (!(decay > 0.0 && decay <= 1.0)) errs.emplace_back("train.decay must be in (0, 1]");
    if (decay_every == 0) errs.emplace_back("train.decay_every must be >= 1");
    if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) errs.emplace_back("train.aux_weight must be >= 0");
    if (!(target_spacing_mm > 0.0)) errs.emplace_back("train.target_spacing_mm must be > 0");
    std::size_t counts[3] = {0, 0, 0};
    for (ViewAxis v : view_cycle) ++counts[static_cast<int>(v)];
    if (counts[0] != 4 || counts[1] != 1 || counts[2] != 1) {
        errs.emplace_back("train.view_cycle must contain 4 transversal, 1 coronal and 1 sagittal entries");
    }
    return errs;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    std::vector<std::string> cycle;
    for (ViewAxis v : c.view_cycle) cycle.push_back(view_code(v));
    j = {{"lr0", c.lr0},
         {"decay", c.decay},
         {"decay_every", c.decay_every},
         {"max_steps", c.max_steps},
         {"aux_weight", c.aux_weight},
         {"view_cycle", cycle},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"target_spacing_mm", c.target_spacing_mm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr0 = j.value("lr0", c.lr0);
    c.decay = j.value("decay", c.decay);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.aux_weight = j.value("aux_weight", c.aux_weight);
    if (j.contains("view_cycle")) {
        const auto cycle = j.at("view_cycle").get<std::vector<std::string>>();
        if (cycle.size() != c.view_cycle.size()) throw ConfigError("train.view_cycle must have 6 entries");
        for (std::size_t i = 0; i < cycle.size(); ++i) {
            try {
                c.view_cycle[i] = parse_view(cycle[i]);
            } catch (const std::exception&) {
                throw ConfigError("train.view_cycle: unknown view '" + cycle[i] + "'");
            }
        }
    }
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.target_spacing_mm = j.value("target_spacing_mm", c.target_spacing_mm);
}

std::vector<std::string> RunConfig::validate() const {
    std::vector<std::string> errs = model.validate();
    for (auto& e : train.validate()) errs.push_back(std::move(e));
    if (!(augment.flip_p >= 0.0 && augment.flip_p <= 1.0)) errs.emplace_back("augment.flip_p must be in [0, 1]");
    if (!(augment.deform_p >= 0.0 && augment.deform_p <= 1.0)) {
        errs.emplace_back("augment.deform_p must be in [0, 1]");
    }
    if (augment.limits.rotation_max < 0 || augment.limits.shear_max < 0 || augment.limits.projective_max < 0) {
        errs.emplace_back("augment deformation limits must be >= 0");
    }
    const auto [S, H, W] = augment.slab;
    if (S != model.slab) {
        errs.push_back("augment.slab[0] (" + std::to_string(S) + ") must equal model.slab (" +
                       std::to_string(model.slab) + ")");
    }
    if (model.depth >= 1 && model.depth <= 10) {
        const std::size_t m = model.spatial_multiple();
        if (H == 0 || H % m != 0 || W == 0 || W % m != 0) {
            errs.push_back("augment.slab H and W must be positive multiples of 2^depth = " + std::to_string(m));
        }
    }
    return errs;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model", c.model}, {"train", c.train}, {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "model" && key != "train" && key != "augment") {
            throw ConfigError("unknown config block '" + key + "'");
        }
    }
    if (j.contains("model")) c.model = j.at("model").get<nn::ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("augment")) c.augment = j.at("augment").get<augment::AugmentConfig>();
}

double lr_at(const TrainConfig& cfg, std::uint64_t step) {
    const auto n = static_cast<double>(step / cfg.decay_every);
    return cfg.lr0 * std::pow(cfg.decay, n);
}

// ---------------------------------------------------------------------------

AdamState make_adam_state(const TensorMap<float>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
        s.m.emplace(name, Tensor<float>(t.shape()));
        s.v.emplace(name, Tensor<float>(t.shape()));
    }
    return s;
}

template <typename T>
void adam_step(TensorMap<T>& params, const TensorMap<T>& grads, TensorMap<T>& m, TensorMap<T>& v, std::uint64_t& t,
               double lr) {
    for (const auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) throw Error("adam_step: missing gradient for '" + name + "'");
        if (g->second.shape() != p.shape() || m.at(name).shape() != p.shape() || v.at(name).shape() != p.shape()) {
            throw ShapeError("adam_step: shape mismatch for '" + name + "'");
        }
        const auto& gv = g->second;
        for (std::size_t i = 0; i < gv.size(); ++i) {
            if (!std::isfinite(gv[i])) {
                throw NumericError("non-finite gradient in '" + name + "' at index " + std::to_string(i) +
                                   " (step " + std::to_string(t + 1) + ")");
            }
        }
    }
    ++t;
    const double b1 = AdamState::beta1;
    const double b2 = AdamState::beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name);
        auto& mt = m.at(name);
        auto& vt = v.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = b1 * mt[i] + (1.0 - b1) * gi;
            const double vi = b2 * vt[i] + (1.0 - b2) * gi * gi;
            mt[i] = static_cast<T>(mi);
            vt[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + AdamState::eps));
        }
    }
}

template void adam_step(TensorMap<float>&, const TensorMap<float>&, TensorMap<float>&, TensorMap<float>&,
                        std::uint64_t&, double);
template void adam_step(TensorMap<double>&, const TensorMap<double>&, TensorMap<double>&, TensorMap<double>&,
                        std::uint64_t&, double);

void adam_step(TensorMap<float>& params, const TensorMap<float>& grads, AdamState& state, double lr) {
    adam_step(params, grads, state.m, state.v, state.t, lr);
}

// ---------------------------------------------------------------------------

Grid3<ClassId> downsample_labels(const Grid3<ClassId>& labels, std::size_t factor) {
    const Dims3 d = labels.dims();
    if (factor == 0 || d.y % factor != 0 || d.x % factor != 0) {
        throw ShapeError("downsample_labels: dims not divisible by factor " + std::to_string(factor));
    }
    Grid3<ClassId> out(Dims3{d.z, d.y / factor, d.x / factor});
    const std::size_t off = factor / 2;
    for (std::size_t s = 0; s < d.z; ++s) {
        for (std::size_t y = 0; y < out.dims().y; ++y) {
            for (std::size_t x = 0; x < out.dims().x; ++x) out(s, y, x) = labels(s, y * factor + off, x * factor + off);
        }
    }
    return out;
}

Grid3<ClassId> target_slices(const Grid3<ClassId>& labels, const nn::ModelConfig& cfg) {
    if (labels.dims().z != cfg.slab) throw ShapeError("label slab depth does not match model.slab");
    if (cfg.slab_out == nn::SlabOut::AllSlices) return labels;
    const Dims3 d = labels.dims();
    const std::size_t c = (cfg.slab - 1) / 2;
    Grid3<ClassId> out(Dims3{1, d.y, d.x});
    for (std::size_t y = 0; y < d.y; ++y) {
        for (std::size_t x = 0; x < d.x; ++x) out(0, y, x) = labels(c, y, x);
    }
    return out;
}

template <typename T>
Var slab_loss(Tape<T>& tape, const nn::ForwardResult<T>& fwd, const Grid3<ClassId>& labels,
              const nn::ModelConfig& cfg, double aux_weight, LossTerms* terms) {
    const Grid3<ClassId> target = target_slices(labels, cfg);
    const std::size_t K = cfg.class_count;
    Var main = nn::cross_entropy_groups(tape, fwd.logits, std::span<const ClassId>(target.storage()), K);
    std::vector<Var> parts{main};
    std::vector<T> coeffs{T{1}};
    LossTerms local;
    local.main = tape.value(main)[0];
    if (aux_weight > 0.0) {
        for (std::size_t i = 0; i < fwd.aux_logits.size(); ++i) {
            const Grid3<ClassId> small = downsample_labels(target, std::size_t{2} << i);
            Var ce = nn::cross_entropy_groups(tape, fwd.aux_logits[i], std::span<const ClassId>(small.storage()), K);
            local.aux.push_back(tape.value(ce)[0]);
            parts.push_back(ce);
            coeffs.push_back(static_cast<T>(aux_weight));
        }
    }
    Var total = parts.size() == 1 ? main : nn::linear_combination(tape, parts, coeffs);
    local.total = tape.value(total)[0];
    if (terms) *terms = std::move(local);
    return total;
}

template Var slab_loss(Tape<float>&, const nn::ForwardResult<float>&, const Grid3<ClassId>&, const nn::ModelConfig&,
                       double, LossTerms*);
template Var slab_loss(Tape<double>&, const nn::ForwardResult<double>&, const Grid3<ClassId>&,
                       const nn::ModelConfig&, double, LossTerms*);

Tensor<float> slab_tensor(const Grid3<float>& image) {
    const Dims3 d = image.dims();
    return Tensor<float>({d.z, d.y, d.x}, image.storage());
}

Case prepare_case(const Case& c, double target_spacing_mm) {
    return Case{c.id, resample_isotropic(standardize(c.image), target_spacing_mm),
                resample_labels_isotropic(c.labels, target_spacing_mm)};
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& trace) {
    os << "step,lr,train_loss,val_loss\n";
    char buf[128];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,", static_cast<unsigned long long>(r.step), r.lr,
                      r.train_loss);
        os << buf;
        if (r.val_loss) {
            std::snprintf(buf, sizeof buf, "%.17g", *r.val_loss);
            os << buf;
        }
        os << '\n';
    }
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write_loss_csv(os, trace);
}

double validation_loss(const nn::Network<float>& net, const std::vector<Case>& cases) {
    const nn::ModelConfig& cfg = net.config();
    double sum = 0.0;
    std::size_t n = 0;
    for (const Case& c : cases) {
        const Dims3 d = c.image.dims();
        if (d.z < cfg.slab) continue;
        const std::size_t z0 = (d.z - cfg.slab) / 2;
        Grid3<float> img(Dims3{cfg.slab, d.y, d.x});
        Grid3<ClassId> lab(Dims3{cfg.slab, d.y, d.x});
        for (std::size_t s = 0; s < cfg.slab; ++s) {
            for (std::size_t y = 0; y < d.y; ++y) {
                for (std::size_t x = 0; x < d.x; ++x) {
                    img(s, y, x) = c.image.voxels(z0 + s, y, x);
                    lab(s, y, x) = c.labels.voxels(z0 + s, y, x);
                }
            }
        }
        img = pad_to_multiple(img, cfg.spatial_multiple());
        lab = pad_to_multiple(lab, cfg.spatial_multiple());
        Tape<float> tape(false);
        const Var in = tape.leaf(slab_tensor(img));
        const auto fwd = net.forward(tape, in, Mode::Inference);
        LossTerms terms;
        (void)slab_loss(tape, fwd, lab, cfg, 0.0, &terms);
        sum += terms.main;
        ++n;
    }
    if (n == 0) throw Error("validation_loss: no case has at least model.slab slices");
    return sum / static_cast<double>(n);
}

TrainResult train_loop(const std::vector<Case>& train_cases, const std::vector<Case>& val_cases,
                       const RunConfig& cfg, const nn::Checkpoint* resume, const TrainHooks& hooks) {
    if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs.front());
    if (train_cases.empty()) throw std::invalid_argument("train_loop: no training cases");

    nn::Network<float> net = resume ? nn::restore_network(*resume) : nn::Network<float>(cfg.model, cfg.train.seed);
    if (resume && !(resume->config == cfg.model)) throw ConfigError("resume checkpoint has a different model config");
    AdamState adam = make_adam_state(net.parameters());
    if (resume && !resume->adam_m.empty()) {
        adam.m = resume->adam_m;
        adam.v = resume->adam_v;
        adam.t = resume->adam_t;
    }

    auto snapshot = [&] {
        nn::Checkpoint c = nn::make_checkpoint(net);
        c.adam_m = adam.m;
        c.adam_v = adam.v;
        c.adam_t = adam.t;
        return c;
    };

    const auto [S, H, W] = cfg.augment.slab;
    const TrainConfig& tc = cfg.train;
    TrainResult result;
    for (std::uint64_t step = adam.t; step < tc.max_steps; ++step) {
        Rng rng = Rng::derive(tc.seed, step);
        const ViewAxis view = tc.view_cycle[step % tc.view_cycle.size()];
        const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(train_cases.size()) - 1));
        const Case& c = train_cases[pick];
        augment::Slab slab = augment::crop_slab(c.image, c.labels, view, S, H, W, rng);
        slab = augment::augment(slab, cfg.augment, rng);

        Tape<float> tape;
        const Var in = tape.leaf(slab_tensor(slab.image));
        const auto fwd = net.forward(tape, in, Mode::Train);
        LossTerms terms;
        const Var loss = slab_loss(tape, fwd, slab.labels, cfg.model, tc.aux_weight, &terms);
        if (!std::isfinite(terms.total)) {
            throw NumericError("training diverged: loss is " + std::to_string(terms.total) + " at step " +
                               std::to_string(step));
        }
        tape.backward(loss);
        const double lr = lr_at(tc, step);
        adam_step(net.parameters(), nn::collect_gradients(tape, fwd), adam, lr);
        net.update_running_stats(fwd.bn_stats);

        LossRecord rec{step, lr, terms.total, std::nullopt};
        const bool at_checkpoint = tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0;
        if (at_checkpoint && !val_cases.empty()) rec.val_loss = validation_loss(net, val_cases);
        result.trace.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        if (at_checkpoint && hooks.on_checkpoint) hooks.on_checkpoint(step + 1, snapshot());
    }
    result.checkpoint = snapshot();
    return result;
}

}  // namespace alamo::train
