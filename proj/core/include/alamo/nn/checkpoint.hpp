#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "alamo/nn/model.hpp"

namespace alamo::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serialized network plus optimizer state.
struct Checkpoint {
    ModelConfig config;
    TensorMap<float> parameters;
    TensorMap<float> buffers;
    TensorMap<float> adam_m;
    TensorMap<float> adam_v;
    std::uint64_t adam_t = 0;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

[[nodiscard]] Checkpoint make_checkpoint(const Network<float>& net);

/// Rebuilds the network; throws ConfigError unless every parameter and buffer
/// matches the architecture derived from the stored config.
[[nodiscard]] Network<float> restore_network(const Checkpoint& ckp);

void write_checkpoint(std::ostream& os, const Checkpoint& ckp);
[[nodiscard]] Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace alamo::nn
