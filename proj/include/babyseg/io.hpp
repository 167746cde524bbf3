#ifndef BABYSEG_IO_HPP
#define BABYSEG_IO_HPP

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "babyseg/config.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': invalid JSON: " + e.what());
    }
    return j;
}

inline void save_json_file(const nlohmann::json& j, const std::string& path, int indent = 2) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(indent) << "\n";
}

inline EngineConfig load_config(const std::string& path, bool strict = true) {
    return config_from_json(load_json_file(path), strict);
}

// ---- label protocol --------------------------------------------------------

inline nlohmann::json protocol_to_json(const LabelProtocol& p) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["name"] = p.name;
    j["version"] = p.version;
    auto arr = nlohmann::json::array();
    for (const auto& l : p.labels) {
        nlohmann::json e = {{"id", l.id}, {"name", l.name}};
        switch (l.laterality) {
            case Laterality::Background: e["laterality"] = "background"; break;
            case Laterality::Left: e["laterality"] = "left"; break;
            case Laterality::Right: e["laterality"] = "right"; break;
            case Laterality::Unilateral: e["laterality"] = "unilateral"; break;
        }
        if (l.partner != 0) e["partner"] = l.partner;
        arr.push_back(e);
    }
    j["labels"] = arr;
    return j;
}

inline LabelProtocol protocol_from_json(const nlohmann::json& j) {
    LabelProtocol p;
    if (j.contains("name")) p.name = j["name"].get<std::string>();
    if (j.contains("version")) p.version = j["version"].get<int>();
    if (!j.contains("labels") || !j["labels"].is_array())
        throw DataError("protocol: missing labels array");
    for (const auto& e : j["labels"]) {
        LabelDef l;
        l.id = e.at("id").get<std::uint32_t>();
        l.name = e.at("name").get<std::string>();
        const std::string lat = e.value("laterality", "unilateral");
        if (lat == "background") l.laterality = Laterality::Background;
        else if (lat == "left") l.laterality = Laterality::Left;
        else if (lat == "right") l.laterality = Laterality::Right;
        else if (lat == "unilateral") l.laterality = Laterality::Unilateral;
        else throw DataError("protocol: bad laterality '" + lat + "'");
        l.partner = e.value("partner", 0u);
        p.labels.push_back(l);
    }
    for (const auto& l : p.labels)
        if ((l.laterality == Laterality::Left || l.laterality == Laterality::Right) &&
            !p.contains(l.partner))
            throw DataError("protocol: label '" + l.name + "' has missing partner ID");
    return p;
}

inline LabelProtocol load_protocol(const std::string& path) {
    return protocol_from_json(load_json_file(path));
}

// ---- merge tables ----------------------------------------------------------

// A merge table is a flat JSON object mapping source IDs to target IDs.
inline LabelMergeTable merge_table_from_json(const nlohmann::json& j) {
    LabelMergeTable t;
    const nlohmann::json& m = j.contains("map") ? j["map"] : j;
    if (!m.is_object()) throw DataError("merge table: expected an object of source -> target IDs");
    for (auto it = m.begin(); it != m.end(); ++it) {
        std::size_t pos = 0;
        unsigned long src = 0;
        try {
            src = std::stoul(it.key(), &pos);
        } catch (...) {
            throw DataError("merge table: bad source ID '" + it.key() + "'");
        }
        if (pos != it.key().size()) throw DataError("merge table: bad source ID '" + it.key() + "'");
        t.map[std::uint32_t(src)] = it.value().get<std::uint32_t>();
    }
    return t;
}

inline LabelMergeTable load_merge_table(const std::string& path) {
    return merge_table_from_json(load_json_file(path));
}

// ---- sessions --------------------------------------------------------------

// One imaging session: a label map plus >= 0 co-registered real scans.
struct Session {
    std::string id;
    std::string label_path;
    std::vector<std::string> image_paths;
    std::string age;     // free-form descriptor
    std::string dataset; // source tag
};

inline std::vector<Session> sessions_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DataError("sessions: expected a JSON array");
    std::vector<Session> out;
    for (const auto& e : j) {
        Session s;
        s.id = e.value("id", "session" + std::to_string(out.size()));
        if (!e.contains("labels")) throw DataError("sessions: entry '" + s.id + "' missing labels path");
        s.label_path = e["labels"].get<std::string>();
        if (e.contains("images"))
            s.image_paths = e["images"].get<std::vector<std::string>>();
        s.age = e.value("age", "");
        s.dataset = e.value("dataset", "");
        out.push_back(s);
    }
    return out;
}

inline std::vector<Session> load_sessions(const std::string& path) {
    return sessions_from_json(load_json_file(path));
}

// ---- manifest --------------------------------------------------------------

// One record per emitted sample; the manifest file is JSON lines.
struct ManifestEntry {
    long index = 0;
    std::uint64_t seed = 0;
    std::string session_id;
    std::uint64_t config_hash = 0;
    std::vector<std::string> files;                  // relative to the output dir
    std::map<std::string, std::uint32_t> checksums;  // file -> crc32 of voxel payload
};

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
    nlohmann::json j;
    j["index"] = e.index;
    j["seed"] = e.seed;
    j["session"] = e.session_id;
    j["config_hash"] = e.config_hash;
    j["files"] = e.files;
    j["crc32"] = e.checksums;
    return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    e.index = j.at("index").get<long>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.session_id = j.at("session").get<std::string>();
    e.config_hash = j.value("config_hash", std::uint64_t(0));
    e.files = j.at("files").get<std::vector<std::string>>();
    if (j.contains("crc32"))
        e.checksums = j["crc32"].get<std::map<std::string, std::uint32_t>>();
    return e;
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path + "'");
    std::vector<ManifestEntry> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest '" + path + "' line " + std::to_string(line_no) + ": " +
                            e.what());
        }
    }
    return out;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path + "'");
    for (const auto& e : entries) out << manifest_entry_to_json(e).dump() << "\n";
}

} // namespace babyseg

#endif // BABYSEG_IO_HPP
