#include "alamo/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "alamo/rng.hpp"

namespace alamo::nn {

namespace {

constexpr double kNormEps = 1e-5;
constexpr const char* kBnUpdates = "bn/updates";

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

constexpr EnumName<Arch> kArchNames[] = {{Arch::Dense, "dense"}, {Arch::Plain, "plain"}};
constexpr EnumName<NormMode> kNormNames[] = {
    {NormMode::None, "none"}, {NormMode::BN, "bn"}, {NormMode::IN, "in"}, {NormMode::LN, "ln"}};
constexpr EnumName<BnInference> kBnNames[] = {{BnInference::TrainStats, "train_stats"},
                                              {BnInference::RunningStats, "running_stats"}};
constexpr EnumName<SlabOut> kSlabOutNames[] = {{SlabOut::AllSlices, "all_slices"},
                                               {SlabOut::CenterSlice, "center_slice"}};

template <typename E, std::size_t N>
const char* enum_to(const EnumName<E> (&table)[N], E v) {
    for (const auto& e : table) {
        if (e.value == v) return e.name;
    }
    return "?";
}

template <typename E, std::size_t N>
E enum_from(const EnumName<E> (&table)[N], const std::string& s, const char* field) {
    for (const auto& e : table) {
        if (s == e.name) return e.value;
    }
    throw ConfigError(std::string("unknown value '") + s + "' for model field '" + field + "'");
}

// The architecture is written once against an abstract context. LayoutCtx
// walks channel counts and records parameter shapes; ForwardCtx<T> evaluates
// on a tape. Both see exactly the same sequence of layers.

template <class Ctx>
typename Ctx::Value dense_block(Ctx& ctx, const std::string& name, typename Ctx::Value x, std::size_t layers,
                                std::size_t k) {
    std::vector<typename Ctx::Value> feats{x};
    for (std::size_t j = 0; j < layers; ++j) {
        auto in = j == 0 ? x : ctx.concat(feats);
        feats.push_back(ctx.unit(name + "/conv" + std::to_string(j), in, k, 3));
    }
    return ctx.concat(feats);
}

template <class Ctx>
typename Ctx::Value plain_block(Ctx& ctx, const std::string& name, typename Ctx::Value x, std::size_t layers,
                                std::size_t width) {
    for (std::size_t j = 0; j < layers; ++j) x = ctx.unit(name + "/conv" + std::to_string(j), x, width, 3);
    return x;
}

template <class Ctx>
void run_architecture(const ModelConfig& cfg, Ctx& ctx, typename Ctx::Value input, bool compute_aux,
                      typename Ctx::Value& main, std::vector<typename Ctx::Value>& aux) {
    using V = typename Ctx::Value;
    const bool dense = cfg.arch == Arch::Dense;
    const std::size_t L = cfg.layers_per_block;
    auto width = [&](std::size_t level) { return cfg.f << level; };
    auto block = [&](const std::string& name, V x, std::size_t level) {
        return dense ? dense_block(ctx, name, x, L, cfg.k) : plain_block(ctx, name, x, L, width(level));
    };

    V x = ctx.unit("stem", input, dense ? 2 * cfg.k : cfg.f, 3);
    std::vector<V> skips;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string name = "enc" + std::to_string(l);
        x = block(name, x, l);
        skips.push_back(x);
        if (dense) x = ctx.unit(name + "/down", x, 2 * cfg.k, 1);
        x = ctx.pool(x);
    }
    x = block("mid", x, cfg.depth);
    for (std::size_t l = cfg.depth; l-- > 0;) {
        const std::string name = "dec" + std::to_string(l);
        V up = ctx.up(name + "/up", x, dense ? 2 * cfg.k : width(l));
        x = block(name, ctx.concat({up, skips[l]}), l);
        if (compute_aux && l >= 1) aux.push_back(ctx.head("aux" + std::to_string(l), x, cfg.out_channels()));
    }
    // Collected coarsest-first; report finest-first.
    std::reverse(aux.begin(), aux.end());
    main = ctx.head("head", x, cfg.out_channels());
}

struct LayoutCtx {
    using Value = std::size_t;
    const ModelConfig& cfg;
    std::vector<ParamSpec> params;
    std::vector<std::pair<std::string, std::size_t>> bn;

    void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t ks) {
        params.push_back({name + "/w", {cout, cin, ks, ks}, InitKind::HeUniform, cin * ks * ks});
        params.push_back({name + "/b", {cout}, InitKind::Zero, 1});
    }
    Value unit(const std::string& name, Value x, std::size_t cout, std::size_t ks) {
        conv(name, x, cout, ks);
        if (cfg.norm != NormMode::None) {
            params.push_back({name + "/norm/scale", {cout}, InitKind::One, 1});
            params.push_back({name + "/norm/shift", {cout}, InitKind::Zero, 1});
            if (cfg.norm == NormMode::BN) bn.emplace_back(name + "/norm", cout);
        }
        return cout;
    }
    Value pool(Value x) { return x; }
    Value up(const std::string& name, Value x, std::size_t cout) {
        params.push_back({name + "/w", {x, cout, 2, 2}, InitKind::HeUniform, x});
        params.push_back({name + "/b", {cout}, InitKind::Zero, 1});
        return cout;
    }
    Value concat(const std::vector<Value>& xs) {
        Value c = 0;
        for (Value v : xs) c += v;
        return c;
    }
    Value head(const std::string& name, Value x, std::size_t cout) {
        conv(name, x, cout, 1);
        return cout;
    }
};

template <typename T>
struct ForwardCtx {
    using Value = Var;
    const Network<T>& net;
    Tape<T>& tape;
    Mode mode;
    ForwardResult<T>& result;

    Var param(const std::string& name) {
        auto it = result.params.find(name);
        if (it != result.params.end()) return it->second;
        const auto& p = net.parameters();
        auto pit = p.find(name);
        if (pit == p.end()) throw Error("missing network parameter: " + name);
        const Var v = tape.parameter(pit->second);
        result.params.emplace(name, v);
        return v;
    }

    Var normalize(const std::string& name, Var x) {
        const ModelConfig& cfg = net.config();
        const Var scale = param(name + "/norm/scale");
        const Var shift = param(name + "/norm/shift");
        switch (cfg.norm) {
            case NormMode::None: return x;
            case NormMode::IN: return normalize_batch(tape, x, scale, shift, StatScope::PerChannel, kNormEps);
            case NormMode::LN: return normalize_batch(tape, x, scale, shift, StatScope::PerSample, kNormEps);
            case NormMode::BN: {
                if (mode == Mode::Inference && cfg.bn_inference == BnInference::RunningStats) {
                    if (!net.running_stats_initialized()) {
                        throw Error("batch norm running statistics requested but uninitialized");
                    }
                    const auto& buf = net.buffers();
                    const auto& m = buf.at(name + "/norm/running_mean");
                    const auto& v = buf.at(name + "/norm/running_var");
                    return normalize_fixed(tape, x, scale, shift, m.values(), v.values(), kNormEps);
                }
                NormStats<T> stats;
                const Var y = normalize_batch(tape, x, scale, shift, StatScope::PerChannel, kNormEps, &stats);
                if (mode == Mode::Train) result.bn_stats.emplace_back(name + "/norm", std::move(stats));
                return y;
            }
        }
        return x;
    }

    Var unit(const std::string& name, Var x, std::size_t, std::size_t ks) {
        Var y = conv2d(tape, x, param(name + "/w"), param(name + "/b"), 1, ks / 2);
        if (net.config().norm != NormMode::None) y = normalize(name, y);
        return elu(tape, y);
    }
    Var pool(Var x) { return avg_pool2(tape, x); }
    Var up(const std::string& name, Var x, std::size_t) {
        return conv_transpose2(tape, x, param(name + "/w"), param(name + "/b"));
    }
    Var concat(const std::vector<Var>& xs) { return xs.size() == 1 ? xs.front() : concat_channels(tape, xs); }
    Var head(const std::string& name, Var x, std::size_t) {
        return conv2d(tape, x, param(name + "/w"), param(name + "/b"), 1, 0);
    }
};

}  // namespace

std::string to_string(Arch a) { return enum_to(kArchNames, a); }
std::string to_string(NormMode m) { return enum_to(kNormNames, m); }

std::vector<std::string> ModelConfig::validate() const {
    std::vector<std::string> errs;
    if (arch == Arch::Dense && k == 0) errs.emplace_back("model.k must be >= 1 for dense architecture");
    if (arch == Arch::Plain && f == 0) errs.emplace_back("model.f must be >= 1 for plain architecture");
    if (depth == 0) errs.emplace_back("model.depth must be >= 1");
    if (depth > 10) errs.emplace_back("model.depth must be <= 10");
    if (layers_per_block == 0) errs.emplace_back("model.layers_per_block must be >= 1");
    if (slab == 0) errs.emplace_back("model.slab must be >= 1");
    if (class_count != 11) errs.emplace_back("model.class_count must be 11");
    return errs;
}

std::size_t ModelConfig::out_channels() const { return class_count * out_slices(); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"arch", enum_to(kArchNames, c.arch)},
         {"k", c.k},
         {"f", c.f},
         {"depth", c.depth},
         {"layers_per_block", c.layers_per_block},
         {"slab", c.slab},
         {"class_count", c.class_count},
         {"norm", enum_to(kNormNames, c.norm)},
         {"bn_inference_mode", enum_to(kBnNames, c.bn_inference)},
         {"aux_heads", c.aux_heads},
         {"slab_out", enum_to(kSlabOutNames, c.slab_out)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("arch")) c.arch = enum_from(kArchNames, j.at("arch").get<std::string>(), "arch");
    c.k = j.value("k", c.k);
    c.f = j.value("f", c.f);
    c.depth = j.value("depth", c.depth);
    c.layers_per_block = j.value("layers_per_block", c.layers_per_block);
    c.slab = j.value("slab", c.slab);
    c.class_count = j.value("class_count", c.class_count);
    if (j.contains("norm")) c.norm = enum_from(kNormNames, j.at("norm").get<std::string>(), "norm");
    if (j.contains("bn_inference_mode")) {
        c.bn_inference = enum_from(kBnNames, j.at("bn_inference_mode").get<std::string>(), "bn_inference_mode");
    }
    c.aux_heads = j.value("aux_heads", c.aux_heads);
    if (j.contains("slab_out")) c.slab_out = enum_from(kSlabOutNames, j.at("slab_out").get<std::string>(), "slab_out");
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
    if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs.front());
    LayoutCtx ctx{cfg, {}, {}};
    std::size_t main = 0;
    std::vector<std::size_t> aux;
    run_architecture(cfg, ctx, cfg.slab, cfg.aux_heads, main, aux);
    return ctx.params;
}

std::vector<std::pair<std::string, std::size_t>> batchnorm_layout(const ModelConfig& cfg) {
    LayoutCtx ctx{cfg, {}, {}};
    std::size_t main = 0;
    std::vector<std::size_t> aux;
    run_architecture(cfg, ctx, cfg.slab, cfg.aux_heads, main, aux);
    return ctx.bn;
}

std::size_t count_params(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& p : parameter_layout(cfg)) n += shape_size(p.shape);
    return n;
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    Rng rng(init_seed);
    for (const ParamSpec& spec : parameter_layout(cfg_)) {
        Tensor<T> t(spec.shape);
        switch (spec.init) {
            case InitKind::Zero: break;
            case InitKind::One: t.fill(T{1}); break;
            case InitKind::HeUniform: {
                const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
                for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
        }
        if (!params_.emplace(spec.name, std::move(t)).second) throw Error("duplicate parameter name: " + spec.name);
    }
    const auto bn = batchnorm_layout(cfg_);
    for (const auto& [name, channels] : bn) {
        buffers_.emplace(name + "/running_mean", Tensor<T>({channels}, T{0}));
        buffers_.emplace(name + "/running_var", Tensor<T>({channels}, T{1}));
    }
    if (!bn.empty()) buffers_.emplace(kBnUpdates, Tensor<T>(Shape{}, T{0}));
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

template <typename T>
bool Network<T>::running_stats_initialized() const {
    auto it = buffers_.find(kBnUpdates);
    return it != buffers_.end() && it->second[0] > T{0};
}

template <typename T>
void Network<T>::update_running_stats(const std::vector<std::pair<std::string, NormStats<T>>>& stats,
                                      double momentum) {
    if (stats.empty()) return;
    for (const auto& [name, s] : stats) {
        auto& m = buffers_.at(name + "/running_mean");
        auto& v = buffers_.at(name + "/running_var");
        for (std::size_t c = 0; c < m.size(); ++c) {
            m[c] = static_cast<T>(momentum * m[c] + (1.0 - momentum) * s.mean[c]);
            v[c] = static_cast<T>(momentum * v[c] + (1.0 - momentum) * s.var[c]);
        }
    }
    buffers_.at(kBnUpdates)[0] += T{1};
}

template <typename T>
ForwardResult<T> Network<T>::forward(Tape<T>& tape, Var input, Mode mode) const {
    const Tensor<T>& in = tape.value(input);
    if (in.rank() != 3 || in.dim(0) != cfg_.slab) {
        throw ShapeError("network input must be [" + std::to_string(cfg_.slab) + ",H,W], got " +
                         shape_string(in.shape()));
    }
    const std::size_t m = cfg_.spatial_multiple();
    if (in.dim(1) % m != 0 || in.dim(2) % m != 0) {
        throw ShapeError("network input spatial dims " + shape_string(in.shape()) + " not divisible by " +
                         std::to_string(m));
    }
    ForwardResult<T> result;
    ForwardCtx<T> ctx{*this, tape, mode, result};
    const bool aux = cfg_.aux_heads && mode == Mode::Train;
    run_architecture(cfg_, ctx, input, aux, result.logits, result.aux_logits);
    result.probs = softmax_groups(tape, result.logits, cfg_.class_count);
    return result;
}

template <typename T>
TensorMap<T> collect_gradients(const Tape<T>& tape, const ForwardResult<T>& result) {
    TensorMap<T> g;
    for (const auto& [name, v] : result.params) g.emplace(name, tape.grad(v));
    return g;
}

template <typename To, typename From>
Network<To> convert_network(const Network<From>& net) {
    Network<To> out(net.config());
    auto copy = [](const TensorMap<From>& src, TensorMap<To>& dst) {
        for (const auto& [name, t] : src) {
            Tensor<To> c(t.shape());
            for (std::size_t i = 0; i < t.size(); ++i) c[i] = static_cast<To>(t[i]);
            dst[name] = std::move(c);
        }
    };
    copy(net.parameters(), out.parameters());
    copy(net.buffers(), out.buffers());
    return out;
}

template class Network<float>;
template class Network<double>;
template TensorMap<float> collect_gradients(const Tape<float>&, const ForwardResult<float>&);
template TensorMap<double> collect_gradients(const Tape<double>&, const ForwardResult<double>&);
template Network<double> convert_network(const Network<float>&);
template Network<float> convert_network(const Network<double>&);
template Network<float> convert_network(const Network<float>&);
template Network<double> convert_network(const Network<double>&);

}  // namespace alamo::nn
