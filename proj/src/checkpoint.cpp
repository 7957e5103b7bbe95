#include "distillseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace distillseg {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

}  // namespace

void save_checkpoint(const fs::path& path, NetworkF& network, Optimizer<float>* optimizer, int epoch,
                     const nlohmann::json& meta) {
    std::vector<std::pair<std::string, const TensorF*>> tensors;
    const auto params = network.parameters();
    for (auto* p : params) tensors.emplace_back("param/" + p->name, &p->value);
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["network"] = network.config();
    header["epoch"] = epoch;
    header["meta"] = meta;
    if (optimizer) {
        header["optimizer"] = {{"spec", optimizer->spec()}, {"steps", optimizer->steps()}};
        for (auto& [name, t] : optimizer->state(params)) tensors.emplace_back("opt/" + name, t);
    }
    nlohmann::json table = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        table.push_back({{"name", name}, {"shape", t->shape().dims()}, {"offset", offset}});
        offset += t->size();
    }
    header["tensors"] = table;
    const std::string text = header.dump();

    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : tensors)
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw LoadError("not a checkpoint: " + path.string());
    if (version != kCheckpointVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw LoadError("truncated checkpoint header in " + path.string());

    const auto header = nlohmann::json::parse(text);
    Checkpoint ckpt;
    ckpt.network = header.at("network").get<NetworkConfig>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.meta = header.value("meta", nlohmann::json::object());
    if (header.contains("optimizer")) ckpt.meta["optimizer"] = header.at("optimizer");
    for (const auto& entry : header.at("tensors")) {
        TensorF t{Shape(entry.at("shape").get<std::vector<Index>>())};
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw LoadError("truncated checkpoint payload in " + path.string());
        ckpt.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

void restore(const Checkpoint& ckpt, NetworkF& network, Optimizer<float>* optimizer) {
    if (!(ckpt.network == network.config())) throw IntegrityError("checkpoint network config differs");
    const auto params = network.parameters();
    for (auto* p : params) {
        const auto it = ckpt.tensors.find("param/" + p->name);
        if (it == ckpt.tensors.end()) throw IntegrityError("checkpoint lacks parameter " + p->name);
        if (!(it->second.shape() == p->value.shape())) throw IntegrityError("shape mismatch for " + p->name);
        p->value = it->second;
    }
    if (!optimizer) return;
    if (!ckpt.meta.contains("optimizer")) throw IntegrityError("checkpoint has no optimizer state");
    optimizer->set_steps(ckpt.meta.at("optimizer").at("steps").get<std::int64_t>());
    for (auto& [name, t] : optimizer->state(params)) {
        const auto it = ckpt.tensors.find("opt/" + name);
        if (it == ckpt.tensors.end()) throw IntegrityError("checkpoint lacks optimizer slot " + name);
        *t = it->second;
    }
}

NetworkF load_network(const fs::path& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    NetworkF net(ckpt.network);
    restore(ckpt, net, nullptr);
    return net;
}

}  // namespace distillseg
