#ifndef BABYSEG_INSPECT_HPP
#define BABYSEG_INSPECT_HPP

#include <map>
#include <string>

#include <json.hpp>

#include "babyseg/volume.hpp"

namespace babyseg {

// Running min/max/mean of one randomization row plus its gate fire counts.
// Used for range auditing over sample traces.
struct ParamStats {
    double min = 1e300, max = -1e300, sum = 0.0;
    long count = 0;
    long fired = 0, gated = 0;

    void value(double v) {
        min = std::min(min, v);
        max = std::max(max, v);
        sum += v;
        ++count;
    }
    void gate(bool applied) {
        ++gated;
        if (applied) ++fired;
    }
    double mean() const { return count ? sum / double(count) : 0.0; }
    double fire_rate() const { return gated ? double(fired) / double(gated) : 0.0; }
};

using TraceStats = std::map<std::string, ParamStats>;

// Accumulates one sample trace into per-row statistics keyed by the
// randomization row names of EngineConfig.
inline void collect_trace_stats(const nlohmann::json& trace, TraceStats& stats) {
    const auto& spatial = trace.at("spatial");
    auto vec_row = [&](const char* key, const char* row) {
        const auto& node = spatial.at(key);
        const bool applied = node.at("applied").get<bool>();
        stats[row].gate(applied);
        if (applied)
            for (const auto& v : node.at("value")) stats[row].value(v.get<double>());
    };
    vec_row("translation", "translation_mm");
    vec_row("rotation", "rotation_deg");
    vec_row("scaling", "scaling");
    vec_row("shear", "shear");
    const auto& warp = spatial.at("warp");
    stats["warp_mm"].gate(warp.at("applied").get<bool>());
    if (warp.at("applied").get<bool>()) {
        stats["warp_mm"].value(warp.at("magnitude_mm").get<double>());
        for (const auto& c : warp.at("control_points"))
            stats["warp_control_points"].value(c.get<double>());
    }
    stats["flip"].gate(trace.at("flip").at("applied").get<bool>());
    const auto& blobs = trace.at("blobs");
    stats["blob_count"].gate(blobs.at("applied").get<bool>());
    if (blobs.at("applied").get<bool>()) {
        stats["blob_count"].value(blobs.at("count").get<double>());
        stats["blob_threshold"].value(blobs.at("threshold").get<double>());
        for (const auto& c : blobs.at("control_points"))
            stats["blob_control_points"].value(c.get<double>());
    }
    const auto& plan = trace.at("plan");
    stats["channel_count"].value(plan.at("n").get<double>());
    stats["real_channels"].gate(plan.at("n_real").get<int>() > 0);
    if (plan.at("n_real").get<int>() > 0)
        stats["real_channels"].value(plan.at("n_real").get<double>());

    for (const auto& chan : trace.at("channels")) {
        if (chan.contains("lookup")) {
            const bool applied = chan["lookup"].at("applied").get<bool>();
            stats["lookup_control_points"].gate(applied);
            if (applied)
                stats["lookup_control_points"].value(chan["lookup"].at("control_points").get<double>());
        }
        for (const auto& step : chan.at("steps")) {
            const std::string name = step.at("step").get<std::string>();
            const bool applied = step.at("applied").get<bool>();
            if (name == "bias_field") {
                stats["bias_drop"].gate(applied);
                if (applied) {
                    stats["bias_drop"].value(step.at("drop").get<double>());
                    for (const auto& c : step.at("control_points"))
                        stats["bias_control_points"].value(c.get<double>());
                }
            } else if (name == "blur") {
                stats["blur_fwhm_mm"].gate(applied);
                if (applied)
                    for (const auto& f : step.at("fwhm_mm"))
                        stats["blur_fwhm_mm"].value(f.get<double>());
            } else if (name == "add_noise") {
                stats["noise_sd"].gate(applied);
                if (applied) stats["noise_sd"].value(step.at("sd").get<double>());
            } else if (name == "fill_slices") {
                stats["slice_count"].gate(applied);
                if (applied) {
                    stats["slice_count"].value(double(step.at("indices").size()));
                    stats["slice_intensity"].value(step.at("value").get<double>());
                }
            } else if (name == "downsample_axis") {
                stats["downsample_factor"].gate(applied);
                if (applied) stats["downsample_factor"].value(step.at("factor").get<double>());
            } else if (name == "gamma") {
                stats["gamma_exponent"].gate(applied);
                if (applied) stats["gamma_exponent"].value(step.at("exponent").get<double>());
            } else if (name == "crop_fov") {
                stats["crop_fraction"].gate(applied);
                if (applied)
                    for (const auto& f : step.at("fractions"))
                        stats["crop_fraction"].value(f.get<double>());
            } else if (name == "skullstrip") {
                stats["skullstrip"].gate(applied);
                if (applied) {
                    stats["skullstrip_hole_fill"].gate(step.at("hole_fill").get<bool>());
                    stats["skullstrip_dilate"].value(step.at("dilate").get<double>());
                    stats["skullstrip_erosion_delta"].value(step.at("erosion_delta").get<double>());
                }
            }
        }
    }
}

inline nlohmann::json trace_stats_to_json(const TraceStats& stats, long traces) {
    nlohmann::json out;
    out["traces"] = traces;
    for (const auto& [row, s] : stats) {
        nlohmann::json r;
        if (s.count > 0) {
            r["min"] = s.min;
            r["max"] = s.max;
            r["mean"] = s.mean();
            r["count"] = s.count;
        }
        if (s.gated > 0) r["fire_rate"] = s.fire_rate();
        out["rows"][row] = r;
    }
    return out;
}

} // namespace babyseg

#endif // BABYSEG_INSPECT_HPP
