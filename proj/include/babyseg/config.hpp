#ifndef BABYSEG_CONFIG_HPP
#define BABYSEG_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "babyseg/volume.hpp"

namespace babyseg {

// One randomization row: uniform range [lo, hi] plus the probability that the
// step fires at all. Rows without a gate keep p = 1.
struct RangeP {
    double lo = 0.0;
    double hi = 0.0;
    double p = 1.0;

    void validate(const std::string& row) const {
        if (!(lo <= hi)) throw DataError("config row '" + row + "': range not well-ordered");
        if (p < 0.0 || p > 1.0) throw DataError("config row '" + row + "': probability outside [0, 1]");
    }
};

// Every randomization range and probability as data. Defaults reproduce the
// published parameter table exactly; data/table1.json carries the same values.
struct EngineConfig {
    int schema_version = 1;

    std::string rng_algorithm = "splitmix64";
    std::uint64_t master_seed = 0;

    GridSpec grid{{192, 192, 192}, {0.7, 0.7, 0.7}, "LIA"};

    // Spatial augmentation.
    RangeP translation_mm{-45, 45, 1.0};
    RangeP rotation_deg{-30, 30, 1.0};
    RangeP scaling{0.90, 1.10, 1.0};
    RangeP shear{0.90, 1.10, 1.0};
    RangeP warp_mm{0, 18, 1.0};
    RangeP warp_control_points{2, 16, 1.0};
    RangeP flip{0, 0, 0.5};

    // Background blobs.
    RangeP blob_count{1, 3, 0.5};
    RangeP blob_control_points{2, 4, 1.0};
    RangeP blob_threshold{0, 0.5, 1.0};

    // Contrast synthesis.
    RangeP channel_count{1, 4, 1.0};
    RangeP real_channels{1, 2, 0.5};
    RangeP label_intensity{0, 1, 1.0};
    RangeP lookup_control_points{2, 8, 0.5};

    // Corruption chain.
    RangeP bias_drop{0, 0.5, 1.0};
    RangeP bias_control_points{2, 4, 1.0};
    RangeP blur_fwhm_mm{0, 3, 1.0};
    RangeP noise_sd{0, 0.10, 1.0};
    RangeP slice_count{1, 3, 0.5};
    RangeP slice_intensity{0, 1, 1.0};
    RangeP downsample_factor{1, 4, 0.5};
    RangeP gamma_exponent{0.5, 1.5, 1.0};
    RangeP crop_fraction{0, 0.33, 0.5};
    RangeP skullstrip{0, 0, 0.5};
    RangeP skullstrip_dilate{0, 10, 1.0};
    RangeP skullstrip_erosion_delta{-4, 8, 1.0};
    RangeP skullstrip_hole_fill{0, 0, 0.5};

    // Policy toggles. The variants keep the alternative readings of the
    // source ranges available without changing the operative defaults.
    bool blob_count_text_variant = false;  // n_blobs ~ U{0..3} instead of gate + U{1..3}
    bool real_cap_formula_variant = false; // n_real ~ U(0, min(avail, n)) instead of gate + cap 2
    bool bias_symmetric_gain = false;      // field in [1-d, 1+d] instead of [1-d, 1]
    bool keep_transients = false;          // keep blob / non-brain IDs in emitted label maps
    bool warp_then_affine = true;          // composition order of the spatial transform
    std::vector<double> session_weights;   // empty = uniform over sessions

    void validate() const {
        grid.validate();
        translation_mm.validate("translation_mm");
        rotation_deg.validate("rotation_deg");
        scaling.validate("scaling");
        shear.validate("shear");
        warp_mm.validate("warp_mm");
        warp_control_points.validate("warp_control_points");
        flip.validate("flip");
        blob_count.validate("blob_count");
        blob_control_points.validate("blob_control_points");
        blob_threshold.validate("blob_threshold");
        channel_count.validate("channel_count");
        real_channels.validate("real_channels");
        label_intensity.validate("label_intensity");
        lookup_control_points.validate("lookup_control_points");
        bias_drop.validate("bias_drop");
        bias_control_points.validate("bias_control_points");
        blur_fwhm_mm.validate("blur_fwhm_mm");
        noise_sd.validate("noise_sd");
        slice_count.validate("slice_count");
        slice_intensity.validate("slice_intensity");
        downsample_factor.validate("downsample_factor");
        gamma_exponent.validate("gamma_exponent");
        crop_fraction.validate("crop_fraction");
        skullstrip.validate("skullstrip");
        skullstrip_dilate.validate("skullstrip_dilate");
        skullstrip_erosion_delta.validate("skullstrip_erosion_delta");
        skullstrip_hole_fill.validate("skullstrip_hole_fill");
        if (rng_algorithm != "splitmix64")
            throw DataError("config: unknown rng algorithm '" + rng_algorithm + "'");
    }
};

namespace detail {

using nlohmann::json;

inline json range_to_json(const RangeP& r, bool gated) {
    json j;
    j["range"] = {r.lo, r.hi};
    if (gated) j["p"] = r.p;
    return j;
}

inline RangeP range_from_json(const json& j, const std::string& row, bool gated, bool strict) {
    RangeP r;
    if (!j.contains("range") || !j["range"].is_array() || j["range"].size() != 2)
        throw DataError("config row '" + row + "': missing or malformed range endpoints");
    r.lo = j["range"][0].get<double>();
    r.hi = j["range"][1].get<double>();
    r.p = 1.0;
    if (gated && j.contains("p")) r.p = j["p"].get<double>();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "range" && it.key() != "p") {
            if (strict) throw DataError("config row '" + row + "': unknown field '" + it.key() + "'");
            std::cerr << "warning: config row '" << row << "': ignoring unknown field '" << it.key()
                      << "'\n";
        }
    }
    r.validate(row);
    return r;
}

} // namespace detail

inline nlohmann::json config_to_json(const EngineConfig& c) {
    using detail::range_to_json;
    nlohmann::json j;
    j["schema_version"] = c.schema_version;
    j["rng"] = {{"algorithm", c.rng_algorithm}, {"master_seed", c.master_seed}};
    j["grid"] = {{"shape", c.grid.shape}, {"spacing", c.grid.spacing}, {"orientation", c.grid.orientation}};
    nlohmann::json r;
    r["translation_mm"] = range_to_json(c.translation_mm, true);
    r["rotation_deg"] = range_to_json(c.rotation_deg, true);
    r["scaling"] = range_to_json(c.scaling, true);
    r["shear"] = range_to_json(c.shear, true);
    r["warp_mm"] = range_to_json(c.warp_mm, true);
    r["warp_control_points"] = range_to_json(c.warp_control_points, false);
    r["flip"] = {{"p", c.flip.p}};
    r["blob_count"] = range_to_json(c.blob_count, true);
    r["blob_control_points"] = range_to_json(c.blob_control_points, false);
    r["blob_threshold"] = range_to_json(c.blob_threshold, false);
    r["channel_count"] = range_to_json(c.channel_count, false);
    r["real_channels"] = range_to_json(c.real_channels, true);
    r["label_intensity"] = range_to_json(c.label_intensity, false);
    r["lookup_control_points"] = range_to_json(c.lookup_control_points, true);
    r["bias_drop"] = range_to_json(c.bias_drop, true);
    r["bias_control_points"] = range_to_json(c.bias_control_points, false);
    r["blur_fwhm_mm"] = range_to_json(c.blur_fwhm_mm, true);
    r["noise_sd"] = range_to_json(c.noise_sd, true);
    r["slice_count"] = range_to_json(c.slice_count, true);
    r["slice_intensity"] = range_to_json(c.slice_intensity, false);
    r["downsample_factor"] = range_to_json(c.downsample_factor, true);
    r["gamma_exponent"] = range_to_json(c.gamma_exponent, true);
    r["crop_fraction"] = range_to_json(c.crop_fraction, true);
    r["skullstrip"] = {{"p", c.skullstrip.p}};
    r["skullstrip_dilate"] = range_to_json(c.skullstrip_dilate, true);
    r["skullstrip_erosion_delta"] = range_to_json(c.skullstrip_erosion_delta, true);
    r["skullstrip_hole_fill"] = {{"p", c.skullstrip_hole_fill.p}};
    j["randomization"] = r;
    j["policy"] = {{"blob_count_text_variant", c.blob_count_text_variant},
                   {"real_cap_formula_variant", c.real_cap_formula_variant},
                   {"bias_symmetric_gain", c.bias_symmetric_gain},
                   {"keep_transients", c.keep_transients},
                   {"warp_then_affine", c.warp_then_affine}};
    if (!c.session_weights.empty()) j["policy"]["session_weights"] = c.session_weights;
    return j;
}

inline EngineConfig config_from_json(const nlohmann::json& j, bool strict = true) {
    using detail::range_from_json;
    EngineConfig c;
    const std::vector<std::string> top_keys = {"schema_version", "rng", "grid", "randomization", "policy"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(top_keys.begin(), top_keys.end(), it.key()) == top_keys.end()) {
            if (strict) throw DataError("config: unknown field '" + it.key() + "'");
            std::cerr << "warning: config: ignoring unknown field '" << it.key() << "'\n";
        }
    }
    if (j.contains("schema_version")) c.schema_version = j["schema_version"].get<int>();
    if (c.schema_version != 1)
        throw DataError("config: unsupported schema_version " + std::to_string(c.schema_version));
    if (j.contains("rng")) {
        if (j["rng"].contains("algorithm")) c.rng_algorithm = j["rng"]["algorithm"].get<std::string>();
        if (j["rng"].contains("master_seed")) c.master_seed = j["rng"]["master_seed"].get<std::uint64_t>();
    }
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        if (g.contains("shape")) c.grid.shape = g["shape"].get<IVec3>();
        if (g.contains("spacing")) c.grid.spacing = g["spacing"].get<Vec3>();
        if (g.contains("orientation")) c.grid.orientation = g["orientation"].get<std::string>();
    }
    if (!j.contains("randomization")) throw DataError("config: missing 'randomization' section");
    const auto& r = j["randomization"];
    auto row = [&](const char* name, RangeP& dst, bool gated) {
        if (!r.contains(name)) throw DataError(std::string("config: missing randomization row '") + name + "'");
        dst = range_from_json(r[name], name, gated, strict);
    };
    auto gate_only = [&](const char* name, RangeP& dst) {
        if (!r.contains(name)) throw DataError(std::string("config: missing randomization row '") + name + "'");
        if (!r[name].contains("p")) throw DataError(std::string("config row '") + name + "': missing probability");
        dst.lo = dst.hi = 0.0;
        dst.p = r[name]["p"].get<double>();
        dst.validate(name);
    };
    row("translation_mm", c.translation_mm, true);
    row("rotation_deg", c.rotation_deg, true);
    row("scaling", c.scaling, true);
    row("shear", c.shear, true);
    row("warp_mm", c.warp_mm, true);
    row("warp_control_points", c.warp_control_points, false);
    gate_only("flip", c.flip);
    row("blob_count", c.blob_count, true);
    row("blob_control_points", c.blob_control_points, false);
    row("blob_threshold", c.blob_threshold, false);
    row("channel_count", c.channel_count, false);
    row("real_channels", c.real_channels, true);
    row("label_intensity", c.label_intensity, false);
    row("lookup_control_points", c.lookup_control_points, true);
    row("bias_drop", c.bias_drop, true);
    row("bias_control_points", c.bias_control_points, false);
    row("blur_fwhm_mm", c.blur_fwhm_mm, true);
    row("noise_sd", c.noise_sd, true);
    row("slice_count", c.slice_count, true);
    row("slice_intensity", c.slice_intensity, false);
    row("downsample_factor", c.downsample_factor, true);
    row("gamma_exponent", c.gamma_exponent, true);
    row("crop_fraction", c.crop_fraction, true);
    gate_only("skullstrip", c.skullstrip);
    row("skullstrip_dilate", c.skullstrip_dilate, true);
    row("skullstrip_erosion_delta", c.skullstrip_erosion_delta, true);
    gate_only("skullstrip_hole_fill", c.skullstrip_hole_fill);
    if (j.contains("policy")) {
        const auto& p = j["policy"];
        if (p.contains("blob_count_text_variant")) c.blob_count_text_variant = p["blob_count_text_variant"].get<bool>();
        if (p.contains("real_cap_formula_variant")) c.real_cap_formula_variant = p["real_cap_formula_variant"].get<bool>();
        if (p.contains("bias_symmetric_gain")) c.bias_symmetric_gain = p["bias_symmetric_gain"].get<bool>();
        if (p.contains("keep_transients")) c.keep_transients = p["keep_transients"].get<bool>();
        if (p.contains("warp_then_affine")) c.warp_then_affine = p["warp_then_affine"].get<bool>();
        if (p.contains("session_weights")) c.session_weights = p["session_weights"].get<std::vector<double>>();
    }
    c.validate();
    return c;
}

// FNV-1a over the canonical JSON dump; identifies a config in manifests.
inline std::uint64_t config_hash(const EngineConfig& c) {
    const std::string dump = config_to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace babyseg

#endif // BABYSEG_CONFIG_HPP
