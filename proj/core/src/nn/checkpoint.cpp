#include "alamo/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "../binary_io.hpp"

namespace alamo::nn {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'A', 'M', 'O', 'C', 'K', 'P'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;
constexpr std::uint8_t kU64 = 2;
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxRank = 8;

const std::string kBufPrefix = "buf/";
const std::string kMomentPrefix = "opt/m/";
const std::string kVariancePrefix = "opt/v/";
const std::string kStepName = "opt/t";

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

void write_name(std::ostream& os, const std::string& name) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
    write_name(os, name);
    detail::write_le<std::uint8_t>(os, kF32);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::write_le<std::uint64_t>(os, d);
    detail::write_le_array(os, t.data(), t.size());
}

void write_map(std::ostream& os, const std::string& prefix, const TensorMap<float>& m) {
    for (const auto& [name, t] : m) write_tensor(os, prefix + name, t);
}

void check_shapes(const TensorMap<float>& expected, const TensorMap<float>& got, const char* what) {
    if (expected.size() != got.size()) {
        throw ConfigError(std::string("checkpoint ") + what + " count " + std::to_string(got.size()) +
                          " does not match architecture (" + std::to_string(expected.size()) + ")");
    }
    for (const auto& [name, t] : expected) {
        auto it = got.find(name);
        if (it == got.end()) throw ConfigError(std::string("checkpoint is missing ") + what + " '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw ConfigError(std::string("checkpoint ") + what + " '" + name + "' has shape " +
                              shape_string(it->second.shape()) + ", architecture expects " + shape_string(t.shape()));
        }
    }
}

}  // namespace

Checkpoint make_checkpoint(const Network<float>& net) {
    Checkpoint c;
    c.config = net.config();
    c.parameters = net.parameters();
    c.buffers = net.buffers();
    return c;
}

Network<float> restore_network(const Checkpoint& ckp) {
    Network<float> net(ckp.config);
    check_shapes(net.parameters(), ckp.parameters, "parameter");
    check_shapes(net.buffers(), ckp.buffers, "buffer");
    if (!ckp.adam_m.empty() || !ckp.adam_v.empty()) {
        check_shapes(net.parameters(), ckp.adam_m, "first moment");
        check_shapes(net.parameters(), ckp.adam_v, "second moment");
    }
    net.parameters() = ckp.parameters;
    net.buffers() = ckp.buffers;
    return net;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckp) {
    os.write(kMagic, sizeof kMagic);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    const std::string cfg = nlohmann::json(ckp.config).dump();
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    const std::uint64_t count =
        ckp.parameters.size() + ckp.buffers.size() + ckp.adam_m.size() + ckp.adam_v.size() + 1;
    detail::write_le<std::uint64_t>(os, count);
    write_map(os, "", ckp.parameters);
    write_map(os, kBufPrefix, ckp.buffers);
    write_map(os, kMomentPrefix, ckp.adam_m);
    write_map(os, kVariancePrefix, ckp.adam_v);
    write_name(os, kStepName);
    detail::write_le<std::uint8_t>(os, kU64);
    detail::write_le<std::uint32_t>(os, 0);
    detail::write_le<std::uint64_t>(os, ckp.adam_t);
    if (!os) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a checkpoint file (bad magic)");
    const auto version = detail::read_le<std::uint32_t>(is, "checkpoint version");
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto cfg_len = detail::read_le<std::uint32_t>(is, "config length");
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw IoError("truncated file while reading checkpoint config");

    Checkpoint c;
    try {
        c.config = nlohmann::json::parse(cfg).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed checkpoint config: ") + e.what());
    }

    const auto count = detail::read_le<std::uint64_t>(is, "record count");
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto name_len = detail::read_le<std::uint32_t>(is, "record name length");
        if (name_len > kMaxName) throw IoError("checkpoint record name too long");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("truncated file while reading record name");
        const auto dtype = detail::read_le<std::uint8_t>(is, "record dtype");
        const auto rank = detail::read_le<std::uint32_t>(is, "record rank");
        if (rank > kMaxRank) throw IoError("checkpoint record '" + name + "' has unsupported rank");
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_le<std::uint64_t>(is, "record extent");

        if (dtype == kU64) {
            if (name != kStepName || rank != 0) throw IoError("unexpected integer record '" + name + "'");
            c.adam_t = detail::read_le<std::uint64_t>(is, "step counter");
            continue;
        }
        Tensor<float> t(shape);
        if (dtype == kF32) {
            detail::read_le_array(is, t.data(), t.size(), "record payload");
        } else if (dtype == kF64) {
            std::vector<double> tmp(t.size());
            detail::read_le_array(is, tmp.data(), tmp.size(), "record payload");
            for (std::size_t i = 0; i < tmp.size(); ++i) t[i] = static_cast<float>(tmp[i]);
        } else {
            throw IoError("checkpoint record '" + name + "' has unknown dtype tag " + std::to_string(dtype));
        }

        TensorMap<float>* dst = &c.parameters;
        std::string key = name;
        if (starts_with(name, kBufPrefix)) {
            dst = &c.buffers;
            key = name.substr(kBufPrefix.size());
        } else if (starts_with(name, kMomentPrefix)) {
            dst = &c.adam_m;
            key = name.substr(kMomentPrefix.size());
        } else if (starts_with(name, kVariancePrefix)) {
            dst = &c.adam_v;
            key = name.substr(kVariancePrefix.size());
        } else if (starts_with(name, "opt/")) {
            throw IoError("unknown optimizer record '" + name + "'");
        }
        if (!dst->emplace(key, std::move(t)).second) throw IoError("duplicate checkpoint record '" + name + "'");
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write_checkpoint(os, ckp);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    return read_checkpoint(is);
}

}  // namespace alamo::nn
