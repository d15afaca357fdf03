#include "alamo/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "alamo/dataset.hpp"
#include "alamo/infer.hpp"
#include "alamo/manifest.hpp"
#include "alamo/metrics.hpp"
#include "alamo/nn/checkpoint.hpp"
#include "alamo/phantom.hpp"
#include "alamo/train.hpp"
#include "alamo/verify.hpp"

namespace alamo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Reported as exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<ViewAxis> parse_views(const std::string& s) {
    std::vector<ViewAxis> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out.push_back(parse_view(tok));
        } catch (const std::exception&) {
            throw UsageError("unknown view '" + tok + "' (expected t, c or s)");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string views_string(const std::vector<ViewAxis>& views) {
    std::string s;
    for (ViewAxis v : views) {
        if (!s.empty()) s += ',';
        s += std::string(view_name(v).substr(0, 1));
    }
    return s;
}

json read_json_file(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot open " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw UsageError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + p.string());
    os << text;
}

std::string case_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", i);
    return buf;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
    std::size_t count = 3;
    std::vector<std::size_t> size{32, 64, 64};
    int organs = 10;
    std::uint64_t seed = 0;
    double noise = 0.05;
    double bias = 0.1;
    double spacing = 1.2;
    std::string out;
};

void cmd_phantom(const PhantomArgs& a, Manifest& m, std::ostream& out) {
    if (a.count < 3) throw UsageError("--count must be at least 3 (the split needs one case per part)");
    if (a.size.size() != 3) throw UsageError("--size expects Z,Y,X");
    if (a.organs < 1 || a.organs > 10) throw UsageError("--organs must be in [1, 10]");
    const Dims3 dims{a.size[0], a.size[1], a.size[2]};
    const fs::path dir(a.out);
    fs::create_directories(dir);
    json specs = json::array();
    for (std::size_t i = 0; i < a.count; ++i) {
        phantom::PhantomSpec spec = phantom::default_spec(dims, a.organs, Rng::derive(a.seed, i).next_u64(),
                                                          a.noise, a.bias);
        spec.spacing = {a.spacing, a.spacing, a.spacing};
        auto [vol, lab] = phantom::generate(spec);
        save_case(dir, Case{case_id(i), std::move(vol), std::move(lab)});
        specs.push_back(json{{"id", case_id(i)}, {"spec", spec}});
    }
    save_split(dir, phantom::split_dataset(a.count, a.seed));
    write_text(dir / "phantoms.json", specs.dump(2) + "\n");
    m.set_seed(a.seed);
    m.set_config(json{{"count", a.count}, {"size", a.size}, {"organs", a.organs}, {"seed", a.seed},
                      {"noise", a.noise}, {"bias", a.bias}, {"spacing_mm", a.spacing}});
    m.add_output(dir);
    out << "wrote " << a.count << " cases to " << dir.string() << '\n';
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string in, out;
    double spacing = 1.2;
};

void cmd_preprocess(const PreprocessArgs& a, Manifest& m, std::ostream& out) {
    if (!fs::is_directory(a.in)) throw UsageError("input directory not found: " + a.in);
    if (!(a.spacing > 0)) throw UsageError("--spacing must be > 0");
    const auto ids = list_cases(a.in);
    fs::create_directories(a.out);
    for (const auto& id : ids) save_case(a.out, train::prepare_case(load_case(a.in, id), a.spacing));
    if (fs::exists(fs::path(a.in) / "split.json")) save_split(a.out, load_split(a.in));
    m.add_input("data", a.in);
    m.set_config(json{{"spacing_mm", a.spacing}});
    m.add_output(a.out);
    out << "preprocessed " << ids.size() << " cases\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out, resume;
    train::RunConfig defaults;
    // Overrides, applied only when given on the command line.
    std::map<std::string, CLI::Option*> set;
    double lr0, decay, aux_weight, flip_p, deform_p, spacing;
    std::uint64_t decay_every, max_steps, seed, checkpoint_every;
    std::size_t k, f, depth, layers, slab;
    std::string arch, norm, bn_inference, slab_out;
    std::vector<std::size_t> crop;
    bool aux = true;
};

bool given(const TrainArgs& a, const std::string& flag) {
    auto it = a.set.find(flag);
    return it != a.set.end() && it->second->count() > 0;
}

train::RunConfig resolve_train_config(const TrainArgs& a) {
    train::RunConfig c;
    if (!a.config.empty()) {
        try {
            c = read_json_file(a.config).get<train::RunConfig>();
        } catch (const json::exception& e) {
            throw UsageError(std::string("invalid config: ") + e.what());
        }
    }
    auto enum_field = [](json j, const char* field, const std::string& v) {
        j[field] = v;
        return j.get<nn::ModelConfig>();
    };
    if (given(a, "--lr0")) c.train.lr0 = a.lr0;
    if (given(a, "--decay")) c.train.decay = a.decay;
    if (given(a, "--decay-every")) c.train.decay_every = a.decay_every;
    if (given(a, "--max-steps")) c.train.max_steps = a.max_steps;
    if (given(a, "--aux-weight")) c.train.aux_weight = a.aux_weight;
    if (given(a, "--seed")) c.train.seed = a.seed;
    if (given(a, "--checkpoint-every")) c.train.checkpoint_every = a.checkpoint_every;
    if (given(a, "--spacing")) c.train.target_spacing_mm = a.spacing;
    if (given(a, "--arch")) c.model = enum_field(c.model, "arch", a.arch);
    if (given(a, "--norm")) c.model = enum_field(c.model, "norm", a.norm);
    if (given(a, "--bn-inference")) c.model = enum_field(c.model, "bn_inference_mode", a.bn_inference);
    if (given(a, "--slab-out")) c.model = enum_field(c.model, "slab_out", a.slab_out);
    if (given(a, "--k")) c.model.k = a.k;
    if (given(a, "--f")) c.model.f = a.f;
    if (given(a, "--depth")) c.model.depth = a.depth;
    if (given(a, "--layers-per-block")) c.model.layers_per_block = a.layers;
    if (given(a, "--slab")) {
        c.model.slab = a.slab;
        c.augment.slab[0] = a.slab;
    }
    if (given(a, "--aux-heads")) c.model.aux_heads = a.aux;
    if (given(a, "--flip-p")) c.augment.flip_p = a.flip_p;
    if (given(a, "--deform-p")) c.augment.deform_p = a.deform_p;
    if (given(a, "--crop")) {
        if (a.crop.size() != 2) throw UsageError("--crop expects H,W");
        c.augment.slab[1] = a.crop[0];
        c.augment.slab[2] = a.crop[1];
    }
    return c;
}

void cmd_train(const TrainArgs& a, Manifest& m, std::ostream& out, std::ostream& err) {
    train::RunConfig cfg;
    try {
        cfg = resolve_train_config(a);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (auto errs = cfg.validate(); !errs.empty()) {
        err << "config has " << errs.size() << " problem(s):\n";
        for (const auto& e : errs) err << "  " << e << '\n';
        throw UsageError("invalid training config");
    }
    if (!fs::is_directory(a.data)) throw UsageError("data directory not found: " + a.data);
    const auto ids = list_cases(a.data);
    if (ids.empty()) throw UsageError("no cases in data directory " + a.data);

    std::vector<std::size_t> train_idx, val_idx;
    if (fs::exists(fs::path(a.data) / "split.json")) {
        const phantom::Split split = load_split(a.data);
        train_idx = split.train;
        val_idx = split.val;
    } else {
        for (std::size_t i = 0; i < ids.size(); ++i) train_idx.push_back(i);
    }
    auto load = [&](const std::vector<std::size_t>& idx) {
        std::vector<Case> cases;
        for (std::size_t i : idx) {
            if (i >= ids.size()) throw UsageError("split.json refers to case index " + std::to_string(i));
            cases.push_back(train::prepare_case(load_case(a.data, ids[i]), cfg.train.target_spacing_mm));
        }
        return cases;
    };
    const auto train_cases = load(train_idx);
    const auto val_cases = load(val_idx);

    std::optional<nn::Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = nn::load_checkpoint(a.resume);
        if (!(resume->config == cfg.model)) throw UsageError("resume checkpoint model config differs from config");
        m.add_input("resume", a.resume);
    }

    const fs::path dir(a.out);
    fs::create_directories(dir);
    train::TrainHooks hooks;
    hooks.on_checkpoint = [&](std::uint64_t steps, const nn::Checkpoint& c) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_step_%07llu.ckpt", static_cast<unsigned long long>(steps));
        nn::save_checkpoint(dir / name, c);
    };
    hooks.on_step = [&](const train::LossRecord& r) {
        if ((r.step + 1) % 100 == 0 || r.val_loss) {
            out << "step " << r.step + 1 << " lr " << r.lr << " loss " << r.train_loss;
            if (r.val_loss) out << " val " << *r.val_loss;
            out << '\n';
        }
    };
    const auto t0 = std::chrono::steady_clock::now();
    const train::TrainResult res = train::train_loop(train_cases, val_cases, cfg, resume ? &*resume : nullptr, hooks);
    m.set_timing("train", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    nn::save_checkpoint(dir / "checkpoint_final.ckpt", res.checkpoint);
    train::write_loss_csv(dir / "loss.csv", res.trace);
    write_text(dir / "config.json", json(cfg).dump(2) + "\n");
    m.add_input("data", a.data);
    if (!a.config.empty()) m.add_input("config", a.config);
    m.set_config(json(cfg));
    m.set_seed(cfg.train.seed);
    m.extra()["train_cases"] = train_cases.size();
    m.extra()["val_cases"] = val_cases.size();
    m.extra()["parameters"] = nn::count_params(cfg.model);
    m.add_output(dir);
    out << "trained " << res.trace.size() << " steps; final checkpoint " << (dir / "checkpoint_final.ckpt").string()
        << '\n';
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint, input, out, views = "t,c,s", fuse = "vote", save_probs;
    std::size_t stride = 0;
    double spacing = 1.2;
    unsigned threads = 0;
};

void save_probs(const fs::path& dir, const std::string& stem, const infer::Prediction& p) {
    fs::create_directories(dir);
    for (const auto& [view, pm] : p.probs) {
        for (std::size_t c = 0; c < kClassCount; ++c) {
            char name[128];
            std::snprintf(name, sizeof name, "%s_prob_%s_c%02zu.mvol", stem.c_str(),
                          std::string(view_name(view)).c_str(), c);
            save_volume(Volume{pm.classes[c], pm.spacing}, dir / name);
        }
    }
}

void cmd_infer(const InferArgs& a, Manifest& m, std::ostream& out) {
    infer::PredictOptions opt;
    opt.views = parse_views(a.views);
    try {
        opt.fuse = infer::parse_fuse(a.fuse);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    opt.stride = a.stride;
    opt.target_spacing_mm = a.spacing;
    opt.threads = a.threads;
    opt.keep_probs = !a.save_probs.empty();
    try {
        opt.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const nn::Checkpoint ckp = nn::load_checkpoint(a.checkpoint);
    nn::Network<float> net = [&] {
        try {
            return nn::restore_network(ckp);
        } catch (const ConfigError& e) {
            throw UsageError(std::string("checkpoint does not match its config: ") + e.what());
        }
    }();

    // A directory input is a dataset: one prediction per case into the output directory.
    std::vector<std::pair<std::string, fs::path>> jobs;
    const bool batch = fs::is_directory(a.input);
    if (batch) {
        for (const auto& id : list_cases(a.input)) jobs.emplace_back(id, image_path(a.input, id));
        fs::create_directories(a.out);
    } else {
        if (!fs::exists(a.input)) throw UsageError("input not found: " + a.input);
        jobs.emplace_back(fs::path(a.input).stem().string(), a.input);
    }
    for (const auto& [id, path] : jobs) {
        const Volume v = load_volume(path);
        const auto t0 = std::chrono::steady_clock::now();
        const infer::Prediction p = infer::predict_full(net, v, opt);
        const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const fs::path dst = batch ? fs::path(a.out) / (id + ".mvol") : fs::path(a.out);
        if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
        save_labels(p.labels, dst);
        m.add_output(dst);
        const std::string prefix = batch ? id + "/" : std::string();
        for (const auto& [view, s] : p.seconds) m.set_timing(prefix + std::string(view_name(view)), s);
        m.set_timing(prefix + "total", total);
        if (opt.keep_probs) {
            save_probs(a.save_probs, id, p);
            m.add_output(a.save_probs);
        }
        out << "predicted " << id << " in " << total << " s\n";
    }
    m.add_input("checkpoint", a.checkpoint);
    m.add_input("input", a.input);
    m.set_config(json{{"views", views_string(opt.views)},
                      {"fuse", infer::to_string(opt.fuse)},
                      {"stride", opt.stride},
                      {"target_spacing_mm", opt.target_spacing_mm},
                      {"threads", infer::thread_limit(opt.threads)},
                      {"model", ckp.config}});
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt, out, compare, name_a = "pred", name_b = "compare";
};

std::vector<metrics::CaseRow> evaluate_dir(const fs::path& pred_dir, const fs::path& gt_dir) {
    if (!fs::is_directory(pred_dir)) throw UsageError("prediction directory not found: " + pred_dir.string());
    if (!fs::is_directory(gt_dir)) throw UsageError("ground-truth directory not found: " + gt_dir.string());
    const auto ids = list_label_files(pred_dir);
    if (ids.empty()) throw UsageError("no predictions in " + pred_dir.string());
    std::vector<metrics::CaseRow> rows;
    for (const auto& id : ids) {
        if (!fs::exists(label_path(gt_dir, id))) throw UsageError("unpaired case id: " + id + " has no ground truth");
        const LabelMap pred = load_labels(pred_dir / (id + ".mvol"));
        const LabelMap gt = load_labels(label_path(gt_dir, id));
        if (!(pred.dims() == gt.dims())) throw UsageError("case " + id + ": prediction and ground truth dims differ");
        for (const auto& cm : metrics::evaluate(pred, gt)) rows.push_back({id, cm});
    }
    return rows;
}

void cmd_eval(const EvalArgs& a, Manifest& m, std::ostream& out) {
    const auto rows = evaluate_dir(a.pred, a.gt);
    const fs::path dir(a.out);
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "per_case.csv");
        metrics::write_case_csv(os, rows);
    }
    {
        std::ofstream os(dir / "summary.csv");
        metrics::write_summary_csv(os, metrics::summarize(rows));
    }
    if (!a.compare.empty()) {
        const auto other = evaluate_dir(a.compare, a.gt);
        std::vector<std::string> ia, ib;
        for (const auto& r : rows) ia.push_back(r.case_id);
        for (const auto& r : other) ib.push_back(r.case_id);
        if (ia != ib) throw UsageError("unpaired case ids between --pred and --compare");
        std::ofstream os(dir / "significance.csv");
        metrics::write_significance_csv(os, metrics::compare(rows, other, a.name_a, a.name_b));
        m.add_input("compare", a.compare);
    }
    m.add_input("pred", a.pred);
    m.add_input("gt", a.gt);
    m.set_config(json{{"name_a", a.name_a}, {"name_b", a.name_b}});
    m.add_output(dir);
    out << "evaluated " << rows.size() / (kClassCount - 1) << " cases\n";
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
    std::string suite = "all", out = ".";
    std::uint64_t seed = 0;
};

bool cmd_verify(const VerifyArgs& a, Manifest& m, std::ostream& out) {
    verify::Report report;
    const bool all = a.suite == "all";
    if (all || a.suite == "gradcheck") {
        verify::GradcheckOptions opt;
        opt.seed = a.seed;
        report.append(verify::gradcheck_suite(opt));
    }
    if (all || a.suite == "metrics") report.append(verify::metrics_suite(a.seed));
    if (all || a.suite == "fusion") report.append(verify::fusion_suite(a.seed));
    report.print(out);
    fs::create_directories(a.out);
    std::ostringstream text;
    report.print(text);
    const fs::path rpt = fs::path(a.out) / "verify_report.txt";
    write_text(rpt, text.str());
    m.set_seed(a.seed);
    m.set_config(json{{"suite", a.suite}, {"seed", a.seed}});
    m.extra()["passed"] = report.passed();
    m.add_output(rpt);
    return report.passed();
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_rerun(const std::string& manifest_path, bool check, std::ostream& out, std::ostream& err) {
    const json old = read_json_file(manifest_path);
    if (!old.contains("argv")) throw UsageError("manifest has no argv");
    const auto argv = old.at("argv").get<std::vector<std::string>>();
    if (!argv.empty() && argv.front() == "rerun") throw UsageError("refusing to rerun a rerun manifest");
    const fs::path here = fs::current_path();
    if (old.contains("cwd")) fs::current_path(old.at("cwd").get<std::string>());
    int code;
    try {
        code = dispatch(argv, out, err);
    } catch (...) {
        fs::current_path(here);
        throw;
    }
    fs::current_path(here);
    if (code != kOk || !check) return code;
    // Compare against the fresh manifest the rerun wrote in the same place.
    const json now = read_json_file(manifest_path);
    if (now.at("outputs") != old.at("outputs")) {
        err << "rerun outputs differ from the manifest\n";
        return kCheckFailed;
    }
    out << "rerun reproduced " << old.at("outputs").size() << " outputs bit-exactly\n";
    return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-view multi-organ MR segmentation: phantoms, training, inference, evaluation, verification.",
                 "alamo"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    std::string manifest_path;
    app.add_option("--manifest", manifest_path, "Manifest path (default: <out>/manifest.json)");

    // phantom gen
    PhantomArgs pa;
    auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic phantom datasets");
    phantom_cmd->require_subcommand(1);
    auto* gen = phantom_cmd->add_subcommand("gen", "Generate (volume, label) pairs and a 66:16:20 split");
    gen->add_option("--count", pa.count, "Number of cases");
    gen->add_option("--size", pa.size, "Grid size Z,Y,X in voxels")->delimiter(',')->expected(3);
    gen->add_option("--organs", pa.organs, "Organs per phantom, first M of the class table (1-10)");
    gen->add_option("--seed", pa.seed, "Random seed");
    gen->add_option("--noise", pa.noise, "Gaussian noise sigma");
    gen->add_option("--bias", pa.bias, "Smooth bias field amplitude");
    gen->add_option("--spacing", pa.spacing, "Isotropic voxel spacing in mm (published default)");
    gen->add_option("--out", pa.out, "Output directory")->required();

    // preprocess
    PreprocessArgs pp;
    auto* prep = app.add_subcommand("preprocess", "Standardize and resample a dataset to isotropic spacing");
    prep->add_option("--in", pp.in, "Input dataset directory")->required();
    prep->add_option("--out", pp.out, "Output directory")->required();
    prep->add_option("--spacing", pp.spacing, "Target spacing in mm (published default)");

    // train
    TrainArgs ta;
    const train::RunConfig d;
    ta.lr0 = d.train.lr0;
    ta.decay = d.train.decay;
    ta.decay_every = d.train.decay_every;
    ta.max_steps = d.train.max_steps;
    ta.aux_weight = d.train.aux_weight;
    ta.seed = d.train.seed;
    ta.checkpoint_every = d.train.checkpoint_every;
    ta.spacing = d.train.target_spacing_mm;
    ta.k = d.model.k;
    ta.f = d.model.f;
    ta.depth = d.model.depth;
    ta.layers = d.model.layers_per_block;
    ta.slab = d.model.slab;
    ta.arch = nn::to_string(d.model.arch);
    ta.norm = nn::to_string(d.model.norm);
    ta.bn_inference = "train_stats";
    ta.slab_out = "all_slices";
    ta.aux = d.model.aux_heads;
    ta.flip_p = d.augment.flip_p;
    ta.deform_p = d.augment.deform_p;
    ta.crop = {d.augment.slab[1], d.augment.slab[2]};
    auto* tr = app.add_subcommand("train", "Train a network; flags override the config file");
    tr->add_option("--config", ta.config, "Config JSON {model, train, augment}");
    tr->add_option("--data", ta.data, "Dataset directory")->required();
    tr->add_option("--out", ta.out, "Output directory")->required();
    tr->add_option("--resume", ta.resume, "Resume from a checkpoint with optimizer state");
    auto opt = [&](const std::string& flag, auto& var, const std::string& help) {
        ta.set[flag] = tr->add_option(flag, var, help);
    };
    opt("--lr0", ta.lr0, "Initial learning rate (published default)");
    opt("--decay", ta.decay, "Learning-rate decay factor (published default)");
    opt("--decay-every", ta.decay_every, "Steps between decays (published default)");
    opt("--max-steps", ta.max_steps, "Training steps");
    opt("--aux-weight", ta.aux_weight, "Weight of each auxiliary head loss");
    opt("--seed", ta.seed, "Random seed");
    opt("--checkpoint-every", ta.checkpoint_every, "Steps between checkpoints and validation (0 = off)");
    opt("--spacing", ta.spacing, "Isotropic resampling target in mm (published default)");
    opt("--arch", ta.arch, "Block type: dense or plain");
    opt("--k", ta.k, "Dense growth rate (published default)");
    opt("--f", ta.f, "Plain first-level filter count (published default)");
    opt("--depth", ta.depth, "Resolution levels");
    opt("--layers-per-block", ta.layers, "Convolutions per block");
    opt("--slab", ta.slab, "Slices per input slab (published default)");
    opt("--norm", ta.norm, "Normalization: none, bn, in or ln");
    opt("--bn-inference", ta.bn_inference, "Batch-norm statistics at inference: train_stats or running_stats");
    opt("--slab-out", ta.slab_out, "Output slices: all_slices or center_slice");
    opt("--aux-heads", ta.aux, "Auxiliary low-resolution heads");
    opt("--flip-p", ta.flip_p, "Flip probability per axis (published default)");
    opt("--deform-p", ta.deform_p, "Projective deformation probability (published default)");
    ta.set["--crop"] = tr->add_option("--crop", ta.crop, "Crop H,W (published default)")->delimiter(',')->expected(2);

    // infer
    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "Predict a label map from a checkpoint");
    inf->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
    inf->add_option("--input", ia.input, "Volume .mvol, or a dataset directory")->required();
    inf->add_option("--out", ia.out, "Output .mvol, or a directory for dataset input")->required();
    inf->add_option("--views", ia.views, "Views to run, comma separated from t,c,s");
    inf->add_option("--fuse", ia.fuse, "Fusion: vote (published default), soft, or single:<view>");
    inf->add_option("--stride", ia.stride, "Slab stride in slices (0 = slab size)");
    inf->add_option("--spacing", ia.spacing, "Isotropic resampling target in mm (published default)");
    inf->add_option("--threads", ia.threads, "Concurrent views (0 = ALAMO_THREADS or hardware)");
    inf->add_option("--save-probs", ia.save_probs, "Directory for per-view per-class probability volumes");

    // eval
    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Per-organ DSC, Jaccard, MSD and HD95 reports");
    ev->add_option("--pred", ea.pred, "Directory of <id>.mvol predictions")->required();
    ev->add_option("--gt", ea.gt, "Dataset directory with <id>_label.mvol")->required();
    ev->add_option("--out", ea.out, "Report directory")->required();
    ev->add_option("--compare", ea.compare, "Second prediction directory for paired tests");
    ev->add_option("--name-a", ea.name_a, "Label of --pred in the significance table");
    ev->add_option("--name-b", ea.name_b, "Label of --compare in the significance table");

    // verify
    VerifyArgs va;
    auto* ver = app.add_subcommand("verify", "Run oracle suites; nonzero exit on failure");
    ver->add_option("suite", va.suite, "gradcheck, metrics, fusion or all")
        ->check(CLI::IsMember({"gradcheck", "metrics", "fusion", "all"}));
    ver->add_option("--seed", va.seed, "Random seed");
    ver->add_option("--out", va.out, "Directory for the report and manifest");

    // rerun
    std::string rerun_path;
    bool rerun_check = false;
    auto* rer = app.add_subcommand("rerun", "Re-execute the command recorded in a manifest");
    rer->add_option("manifest", rerun_path, "manifest.json")->required();
    rer->add_flag("--check", rerun_check, "Fail unless every output hash matches");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        while (!target->get_subcommands().empty()) target = target->get_subcommands().front();
        out << target->help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        // Sub-subcommand help surfaces as a ParseError with a zero exit code.
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kOk;
        }
        err << "error: " << e.what() << "\nRun with --help for usage.\n";
        return kUsage;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    if (sub == "rerun") return cmd_rerun(rerun_path, rerun_check, out, err);

    std::string command = sub == "phantom" ? "phantom gen" : sub;
    Manifest m(command, args);
    std::string out_dir;
    bool ok = true;
    if (sub == "phantom") {
        cmd_phantom(pa, m, out);
        out_dir = pa.out;
    } else if (sub == "preprocess") {
        cmd_preprocess(pp, m, out);
        out_dir = pp.out;
    } else if (sub == "train") {
        cmd_train(ta, m, out, err);
        out_dir = ta.out;
    } else if (sub == "infer") {
        cmd_infer(ia, m, out);
        out_dir = fs::is_directory(ia.out) ? ia.out : fs::path(ia.out).parent_path().string();
    } else if (sub == "eval") {
        cmd_eval(ea, m, out);
        out_dir = ea.out;
    } else if (sub == "verify") {
        ok = cmd_verify(va, m, out);
        out_dir = va.out;
    }
    const fs::path mpath = manifest_path.empty() ? fs::path(out_dir.empty() ? "." : out_dir) / "manifest.json"
                                                 : fs::path(manifest_path);
    m.write(mpath);
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kCheckFailed;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kCheckFailed;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace alamo::cli
