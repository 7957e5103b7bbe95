#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "distillseg/network.hpp"
#include "distillseg/optim.hpp"
#include "json.hpp"

namespace distillseg {

/// On-disk layout: 8-byte magic "DSEGCKPT", u32 format version, u64 header
/// length, JSON header (network config, epoch, optimizer state, tensor
/// table), then raw little-endian float32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NetworkConfig network;
    int epoch = 0;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, TensorF> tensors;
};

/// Serializes parameters (and optimizer state when given); written to a
/// temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, NetworkF& network, Optimizer<float>* optimizer, int epoch,
                     const nlohmann::json& meta = nlohmann::json::object());

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies parameters (and optimizer state) from a checkpoint into an existing
/// network of the same configuration.
void restore(const Checkpoint& ckpt, NetworkF& network, Optimizer<float>* optimizer);

/// Builds a network from a checkpoint.
NetworkF load_network(const std::filesystem::path& path);

}  // namespace distillseg
