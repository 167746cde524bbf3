#ifndef BABYSEG_WEIGHTS_HPP
#define BABYSEG_WEIGHTS_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "babyseg/groupnet.hpp"
#include "babyseg/io.hpp"

namespace babyseg {

static_assert(std::endian::native == std::endian::little,
              "weights container assumes a little-endian host");

// Single-file weights container: 8-byte magic, uint32 header length, JSON
// header (architecture, protocol, tensor table), then raw little-endian
// float32 blobs in the declared order.
constexpr char kWeightsMagic[8] = {'B', 'S', 'E', 'G', 'W', '0', '0', '1'};

inline void save_weights(GroupUNet& net, const LabelProtocol& protocol, const GridSpec& grid,
                         const std::string& path) {
    nlohmann::json header;
    header["format"] = "babyseg-weights";
    header["version"] = 1;
    header["arch"] = {{"levels", net.levels},
                      {"filters", net.filters},
                      {"classes", net.classes},
                      {"in_channels", net.in_channels}};
    header["grid"] = {{"shape", grid.shape}, {"spacing", grid.spacing}, {"orientation", grid.orientation}};
    header["protocol"] = protocol_to_json(protocol);
    auto tensors = nlohmann::json::array();
    for (auto& [name, t] : net.parameters())
        tensors.push_back({{"name", name}, {"shape", t->shape}});
    header["tensors"] = tensors;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(kWeightsMagic, 8);
    const std::uint32_t len = std::uint32_t(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), std::streamsize(hs.size()));
    for (auto& [name, t] : net.parameters())
        out.write(reinterpret_cast<const char*>(t->v.data()), std::streamsize(t->v.size() * 4));
    if (!out) throw DataError("write failed for '" + path + "'");
}

struct LoadedNet {
    GroupUNet net;
    LabelProtocol protocol;
    GridSpec grid;
};

inline LoadedNet load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kWeightsMagic, 8) != 0)
        throw DataError("'" + path + "': not a weights file");
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    if (!in) throw DataError("'" + path + "': truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': bad header: " + e.what());
    }
    if (header.value("format", "") != "babyseg-weights")
        throw DataError("'" + path + "': unknown weights format");

    LoadedNet out{GroupUNet(header["arch"]["levels"].get<int>(),
                            header["arch"]["filters"].get<int>(),
                            header["arch"]["classes"].get<int>(), 0,
                            header["arch"].value("in_channels", 1)),
                  protocol_from_json(header["protocol"]), GridSpec{}};
    if (header.contains("grid")) {
        out.grid.shape = header["grid"]["shape"].get<IVec3>();
        out.grid.spacing = header["grid"]["spacing"].get<Vec3>();
        out.grid.orientation = header["grid"]["orientation"].get<std::string>();
    }

    auto params = out.net.parameters();
    const auto& tensors = header["tensors"];
    if (tensors.size() != params.size()) throw DataError("'" + path + "': tensor table mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        if (tensors[i]["name"].get<std::string>() != name ||
            tensors[i]["shape"].get<std::vector<int>>() != t->shape)
            throw DataError("'" + path + "': tensor " + name + " does not match the architecture");
        in.read(reinterpret_cast<char*>(t->v.data()), std::streamsize(t->v.size() * 4));
        if (!in) throw DataError("'" + path + "': truncated tensor data");
    }
    return out;
}

} // namespace babyseg

#endif // BABYSEG_WEIGHTS_HPP
