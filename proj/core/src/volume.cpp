#include "alamo/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "binary_io.hpp"

namespace alamo {

namespace {

constexpr char kMvolMagic[8] = {'A', 'L', 'A', 'M', 'O', 'V', 'O', 'L'};

struct MvolHeader {
    Dims3 dims;
    Spacing spacing;
    std::string dtype;
    std::string kind;
};

std::size_t dtype_size(const std::string& dtype) { return dtype == "u8" ? 1 : 4; }

void write_mvol(const std::filesystem::path& path, const MvolHeader& h, const void* payload) {
    if (h.dims.empty()) throw ShapeError("cannot save volume with empty dims");
    const nlohmann::json j = {
        {"dims", {h.dims.z, h.dims.y, h.dims.x}},
        {"spacing_mm", {h.spacing.z, h.spacing.y, h.spacing.x}},
        {"dtype", h.dtype},
        {"kind", h.kind},
    };
    const std::string text = j.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write(kMvolMagic, sizeof(kMvolMagic));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::size_t n = h.dims.count();
    if (h.dtype == "u8") {
        detail::write_le_array(os, static_cast<const std::uint8_t*>(payload), n);
    } else {
        detail::write_le_array(os, static_cast<const float*>(payload), n);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

template <typename Fn>
auto field(const nlohmann::json& j, const char* name, Fn&& get) {
    if (!j.contains(name)) throw IoError(std::string("malformed header: missing field '") + name + "'");
    try {
        return get(j.at(name));
    } catch (const nlohmann::json::exception&) {
        throw IoError(std::string("malformed header: bad field '") + name + "'");
    }
}

/// Reads the header and leaves the stream at the payload; returns payload byte count.
MvolHeader read_mvol_header(std::ifstream& is, const std::filesystem::path& path,
                            std::uintmax_t& payload_bytes) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kMvolMagic)) {
        throw IoError("malformed header: bad magic in " + path.string());
    }
    const auto hlen = detail::read_le<std::uint32_t>(is, "header length");
    std::string text(hlen, '\0');
    is.read(text.data(), hlen);
    if (!is) throw IoError("malformed header: truncated header in " + path.string());

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw IoError("malformed header: invalid JSON in " + path.string());
    }
    MvolHeader h;
    auto triple = [](const nlohmann::json& v) {
        if (!v.is_array() || v.size() != 3) throw nlohmann::json::type_error::create(302, "need 3", nullptr);
        return v;
    };
    const auto dims = field(j, "dims", triple);
    for (const auto& d : dims) {
        if (!d.is_number_integer() || d.get<std::int64_t>() < 1) {
            throw IoError("malformed header: bad field 'dims'");
        }
    }
    h.dims = {dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
    const auto sp = field(j, "spacing_mm", triple);
    for (const auto& s : sp) {
        if (!s.is_number() || !(s.get<double>() > 0.0) || !std::isfinite(s.get<double>())) {
            throw IoError("malformed header: bad field 'spacing_mm'");
        }
    }
    h.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    h.dtype = field(j, "dtype", [](const nlohmann::json& v) { return v.get<std::string>(); });
    if (h.dtype != "f32" && h.dtype != "u8") throw IoError("malformed header: bad field 'dtype'");
    h.kind = field(j, "kind", [](const nlohmann::json& v) { return v.get<std::string>(); });
    if (h.kind != "intensity" && h.kind != "label") throw IoError("malformed header: bad field 'kind'");

    const auto file_size = std::filesystem::file_size(path);
    const std::uintmax_t consumed = 8 + 4 + hlen;
    payload_bytes = file_size - consumed;
    if (payload_bytes != h.dims.count() * dtype_size(h.dtype)) {
        throw IoError("payload length mismatch in " + path.string() + ": expected " +
                      std::to_string(h.dims.count() * dtype_size(h.dtype)) + " bytes, found " +
                      std::to_string(payload_bytes));
    }
    return h;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    return is;
}

}  // namespace

bool Spacing::is_isotropic(double tol) const {
    return std::abs(z - y) <= tol && std::abs(z - x) <= tol && std::abs(y - x) <= tol;
}

std::string_view class_name(int id) {
    if (id < 0 || id >= kClassCount) throw std::out_of_range("class id out of range");
    return kClassNames[static_cast<std::size_t>(id)];
}

void LabelMap::validate() const {
    for (ClassId v : voxels.values()) {
        if (v >= kClassCount) throw std::out_of_range("class id out of range: " + std::to_string(v));
    }
}

LabelMap ProbMap::argmax() const {
    LabelMap out{Grid3<ClassId>(dims()), spacing};
    const std::size_t n = out.voxels.size();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        float best_p = classes[0].storage()[i];
        for (int c = 1; c < kClassCount; ++c) {
            const float p = classes[static_cast<std::size_t>(c)].storage()[i];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        out.voxels.storage()[i] = static_cast<ClassId>(best);
    }
    return out;
}

std::string_view view_name(ViewAxis v) {
    switch (v) {
        case ViewAxis::Transversal: return "transversal";
        case ViewAxis::Coronal: return "coronal";
        case ViewAxis::Sagittal: return "sagittal";
    }
    return "?";
}

ViewAxis parse_view(std::string_view s) {
    if (s == "t" || s == "transversal") return ViewAxis::Transversal;
    if (s == "c" || s == "coronal") return ViewAxis::Coronal;
    if (s == "s" || s == "sagittal") return ViewAxis::Sagittal;
    throw ConfigError("unknown view: " + std::string(s));
}

// ---------------------------------------------------------------------------

Volume load_volume(const std::filesystem::path& path) {
    auto is = open_input(path);
    std::uintmax_t bytes = 0;
    const MvolHeader h = read_mvol_header(is, path, bytes);
    if (h.dtype != "f32") throw IoError("malformed header: bad field 'dtype' (volume requires f32)");
    std::vector<float> data(h.dims.count());
    detail::read_le_array(is, data.data(), data.size(), "voxel payload");
    for (float v : data) {
        if (!std::isfinite(v)) throw IoError("non-finite voxel value in " + path.string());
    }
    return Volume{Grid3<float>(h.dims, std::move(data)), h.spacing};
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
    write_mvol(path, {v.dims(), v.spacing, "f32", "intensity"}, v.voxels.storage().data());
}

LabelMap load_labels(const std::filesystem::path& path) {
    auto is = open_input(path);
    std::uintmax_t bytes = 0;
    const MvolHeader h = read_mvol_header(is, path, bytes);
    if (h.dtype != "u8") throw IoError("malformed header: bad field 'dtype' (labels require u8)");
    std::vector<ClassId> data(h.dims.count());
    detail::read_le_array(is, data.data(), data.size(), "label payload");
    LabelMap out{Grid3<ClassId>(h.dims, std::move(data)), h.spacing};
    try {
        out.validate();
    } catch (const std::out_of_range& e) {
        throw IoError(std::string(e.what()) + " in " + path.string());
    }
    return out;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
    labels.validate();
    write_mvol(path, {labels.dims(), labels.spacing, "u8", "label"}, labels.voxels.storage().data());
}

// ---------------------------------------------------------------------------

Dims3 resampled_dims(Dims3 dims, Spacing spacing, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("target spacing must be positive");
    auto one = [t](std::size_t n, double s) {
        const auto r = std::llround(static_cast<double>(n) * s / t);
        return static_cast<std::size_t>(std::max<long long>(r, 1));
    };
    return {one(dims.z, spacing.z), one(dims.y, spacing.y), one(dims.x, spacing.x)};
}

namespace {

struct AxisTap {
    std::size_t i0;
    std::size_t i1;
    double w1;
};

std::vector<AxisTap> linear_taps(std::size_t out_n, double out_s, std::size_t in_n, double in_s) {
    std::vector<AxisTap> taps(out_n);
    const double max_c = static_cast<double>(in_n - 1);
    for (std::size_t i = 0; i < out_n; ++i) {
        double c = static_cast<double>(i) * out_s / in_s;
        c = std::clamp(c, 0.0, max_c);
        const auto i0 = static_cast<std::size_t>(std::floor(c));
        const std::size_t i1 = std::min(i0 + 1, in_n - 1);
        taps[i] = {i0, i1, c - static_cast<double>(i0)};
    }
    return taps;
}

std::vector<std::size_t> nearest_taps(std::size_t out_n, double out_s, std::size_t in_n, double in_s) {
    std::vector<std::size_t> taps(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
        const double c = std::floor(static_cast<double>(i) * out_s / in_s + 0.5);
        taps[i] = static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(in_n - 1)));
    }
    return taps;
}

}  // namespace

template <typename T>
Grid3<T> resample_trilinear(const Grid3<T>& src, Spacing ss, Dims3 od, Spacing os) {
    const Dims3& sd = src.dims();
    if (sd.empty() || od.empty()) throw ShapeError("resample: empty grid");
    const auto tz = linear_taps(od.z, os.z, sd.z, ss.z);
    const auto ty = linear_taps(od.y, os.y, sd.y, ss.y);
    const auto tx = linear_taps(od.x, os.x, sd.x, ss.x);
    Grid3<T> out(od);
    for (std::size_t z = 0; z < od.z; ++z) {
        const auto& a = tz[z];
        for (std::size_t y = 0; y < od.y; ++y) {
            const auto& b = ty[y];
            for (std::size_t x = 0; x < od.x; ++x) {
                const auto& c = tx[x];
                auto lerp_x = [&](std::size_t zz, std::size_t yy) {
                    const double v0 = static_cast<double>(src(zz, yy, c.i0));
                    const double v1 = static_cast<double>(src(zz, yy, c.i1));
                    return v0 + c.w1 * (v1 - v0);
                };
                const double y0 = lerp_x(a.i0, b.i0) + b.w1 * (lerp_x(a.i0, b.i1) - lerp_x(a.i0, b.i0));
                const double y1 = lerp_x(a.i1, b.i0) + b.w1 * (lerp_x(a.i1, b.i1) - lerp_x(a.i1, b.i0));
                out(z, y, x) = static_cast<T>(y0 + a.w1 * (y1 - y0));
            }
        }
    }
    return out;
}

template <typename T>
Grid3<T> resample_nearest(const Grid3<T>& src, Spacing ss, Dims3 od, Spacing os) {
    const Dims3& sd = src.dims();
    if (sd.empty() || od.empty()) throw ShapeError("resample: empty grid");
    const auto tz = nearest_taps(od.z, os.z, sd.z, ss.z);
    const auto ty = nearest_taps(od.y, os.y, sd.y, ss.y);
    const auto tx = nearest_taps(od.x, os.x, sd.x, ss.x);
    Grid3<T> out(od);
    for (std::size_t z = 0; z < od.z; ++z)
        for (std::size_t y = 0; y < od.y; ++y)
            for (std::size_t x = 0; x < od.x; ++x) out(z, y, x) = src(tz[z], ty[y], tx[x]);
    return out;
}

template Grid3<float> resample_trilinear(const Grid3<float>&, Spacing, Dims3, Spacing);
template Grid3<double> resample_trilinear(const Grid3<double>&, Spacing, Dims3, Spacing);
template Grid3<float> resample_nearest(const Grid3<float>&, Spacing, Dims3, Spacing);
template Grid3<ClassId> resample_nearest(const Grid3<ClassId>&, Spacing, Dims3, Spacing);

Volume resample_isotropic(const Volume& v, double t) {
    const Dims3 od = resampled_dims(v.dims(), v.spacing, t);
    const Spacing os{t, t, t};
    return Volume{resample_trilinear(v.voxels, v.spacing, od, os), os};
}

LabelMap resample_labels_isotropic(const LabelMap& labels, double t) {
    const Dims3 od = resampled_dims(labels.dims(), labels.spacing, t);
    const Spacing os{t, t, t};
    return LabelMap{resample_nearest(labels.voxels, labels.spacing, od, os), os};
}

LabelMap resample_labels_to(const LabelMap& labels, Dims3 dims, Spacing spacing) {
    return LabelMap{resample_nearest(labels.voxels, labels.spacing, dims, spacing), spacing};
}

Volume standardize(const Volume& v) {
    const auto vals = v.voxels.values();
    if (vals.size() < 2) throw std::invalid_argument("constant volume: need at least 2 voxels");
    double mean = 0.0;
    for (float x : vals) mean += x;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (float x : vals) var += (x - mean) * (x - mean);
    var /= static_cast<double>(vals.size());
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) throw std::invalid_argument("constant volume: zero standard deviation");
    Volume out{Grid3<float>(v.dims()), v.spacing};
    auto dst = out.voxels.values();
    for (std::size_t i = 0; i < vals.size(); ++i) dst[i] = static_cast<float>((vals[i] - mean) / sd);
    return out;
}

// ---------------------------------------------------------------------------

Dims3 resliced_dims(Dims3 d, ViewAxis view) {
    switch (view) {
        case ViewAxis::Transversal: return d;
        case ViewAxis::Coronal: return {d.y, d.z, d.x};
        case ViewAxis::Sagittal: return {d.x, d.z, d.y};
    }
    return d;
}

namespace {

Dims3 unresliced_dims(Dims3 r, ViewAxis view) {
    switch (view) {
        case ViewAxis::Transversal: return r;
        case ViewAxis::Coronal: return {r.y, r.z, r.x};   // r = (y, z, x)
        case ViewAxis::Sagittal: return {r.y, r.x, r.z};  // r = (x, z, y)
    }
    return r;
}

void require_isotropic(const Spacing& s) {
    if (!s.is_isotropic()) throw std::invalid_argument("reslice requires isotropic spacing");
}

}  // namespace

template <typename T>
Grid3<T> reslice(const Grid3<T>& g, ViewAxis view) {
    if (view == ViewAxis::Transversal) return g;
    const Dims3 d = g.dims();
    Grid3<T> out(resliced_dims(d, view));
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                if (view == ViewAxis::Coronal) {
                    out(y, z, x) = g(z, y, x);
                } else {
                    out(x, z, y) = g(z, y, x);
                }
            }
    return out;
}

template <typename T>
Grid3<T> unreslice(const Grid3<T>& g, ViewAxis view) {
    if (view == ViewAxis::Transversal) return g;
    const Dims3 d = unresliced_dims(g.dims(), view);
    Grid3<T> out(d);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                out(z, y, x) = view == ViewAxis::Coronal ? g(y, z, x) : g(x, z, y);
            }
    return out;
}

template Grid3<float> reslice(const Grid3<float>&, ViewAxis);
template Grid3<double> reslice(const Grid3<double>&, ViewAxis);
template Grid3<ClassId> reslice(const Grid3<ClassId>&, ViewAxis);
template Grid3<float> unreslice(const Grid3<float>&, ViewAxis);
template Grid3<double> unreslice(const Grid3<double>&, ViewAxis);
template Grid3<ClassId> unreslice(const Grid3<ClassId>&, ViewAxis);

Volume reslice(const Volume& v, ViewAxis view) {
    require_isotropic(v.spacing);
    return {reslice(v.voxels, view), v.spacing};
}
LabelMap reslice(const LabelMap& l, ViewAxis view) {
    require_isotropic(l.spacing);
    return {reslice(l.voxels, view), l.spacing};
}
ProbMap reslice(const ProbMap& p, ViewAxis view) {
    require_isotropic(p.spacing);
    ProbMap out;
    out.spacing = p.spacing;
    out.classes.reserve(p.classes.size());
    for (const auto& c : p.classes) out.classes.push_back(reslice(c, view));
    return out;
}
Volume unreslice(const Volume& v, ViewAxis view) {
    require_isotropic(v.spacing);
    return {unreslice(v.voxels, view), v.spacing};
}
LabelMap unreslice(const LabelMap& l, ViewAxis view) {
    require_isotropic(l.spacing);
    return {unreslice(l.voxels, view), l.spacing};
}
ProbMap unreslice(const ProbMap& p, ViewAxis view) {
    require_isotropic(p.spacing);
    ProbMap out;
    out.spacing = p.spacing;
    out.classes.reserve(p.classes.size());
    for (const auto& c : p.classes) out.classes.push_back(unreslice(c, view));
    return out;
}

}  // namespace alamo
