#ifndef BABYSEG_SYNTH_HPP
#define BABYSEG_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "babyseg/config.hpp"
#include "babyseg/noise.hpp"
#include "babyseg/rng.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

// How one training sample's channels split between retained real scans and
// synthetic renderings. n_synth = n - n_real always.
struct ChannelPlan {
    int n = 1;
    int n_real = 0;
    std::vector<int> real_sources; // indices into the session's real scans

    int n_synth() const { return n - n_real; }
};

// Draws the channel count n, gates retention of real scans, and picks which
// real scans to keep (uniform, without replacement). The default caps real
// channels at 2; the formula variant allows up to min(available, n).
inline ChannelPlan plan_channels(Rng& rng, int available_real, const EngineConfig& cfg) {
    if (available_real < 0) throw std::invalid_argument("plan_channels: negative available_real");
    ChannelPlan plan;
    plan.n = rng.uniform_int(int(cfg.channel_count.lo), int(cfg.channel_count.hi));
    if (cfg.real_cap_formula_variant) {
        const int cap = std::min(available_real, plan.n);
        if (cap > 0) plan.n_real = rng.uniform_int(0, cap);
    } else {
        const int cap = std::min({int(cfg.real_channels.hi), available_real, plan.n});
        if (available_real > 0 && cap > 0 && rng.bernoulli(cfg.real_channels.p))
            plan.n_real = rng.uniform_int(std::min(int(cfg.real_channels.lo), cap), cap);
    }
    // Uniform subset without replacement, order preserved for determinism.
    std::vector<int> pool(static_cast<std::size_t>(available_real));
    for (int i = 0; i < available_real; ++i) pool[std::size_t(i)] = i;
    for (int k = 0; k < plan.n_real; ++k) {
        const int j = rng.uniform_int(k, available_real - 1);
        std::swap(pool[std::size_t(k)], pool[std::size_t(j)]);
        plan.real_sources.push_back(pool[std::size_t(k)]);
    }
    return plan;
}

struct RemapParams {
    bool applied = false;
    int control_points = 0;
};

// Deterministic core: min-max to [0, 255], fractional lookup into the table.
inline Volume remap_through_lookup(const Volume& vol, const std::array<float, 256>& table) {
    float lo = vol.data[0], hi = vol.data[0];
    for (float v : vol.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Volume out = vol;
    if (!(hi > lo)) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    const double scale = 255.0 / (double(hi) - double(lo));
    for (auto& v : out.data) {
        const double u = (double(v) - double(lo)) * scale;
        int j = int(std::floor(u));
        if (j >= 255) j = 254;
        if (j < 0) j = 0;
        const double f = u - j;
        v = float(double(table[std::size_t(j)]) * (1 - f) + double(table[std::size_t(j) + 1]) * f);
    }
    return out;
}

// Remaps a real scan's intensity distribution through a random smooth lookup
// table: with probability p the voxel values, min-max normalized to an 8-bit
// index range, index into the table; otherwise the scan passes through
// min-max rescaled to [0, 1]. Constant input maps to zeros either way.
inline std::pair<Volume, RemapParams> remap_real(const Volume& vol, Rng& rng,
                                                 const EngineConfig& cfg) {
    vol.validate();
    for (float v : vol.data)
        if (!std::isfinite(v)) throw std::invalid_argument("remap_real: non-finite input");
    RemapParams params;
    params.applied = rng.bernoulli(cfg.lookup_control_points.p);
    if (!params.applied) {
        float lo = vol.data[0], hi = vol.data[0];
        for (float v : vol.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        Volume out = vol;
        if (!(hi > lo)) {
            std::fill(out.data.begin(), out.data.end(), 0.0f);
            return {out, params};
        }
        const double scale = 1.0 / (double(hi) - double(lo));
        for (auto& v : out.data) v = float((double(v) - double(lo)) * scale);
        return {out, params};
    }
    params.control_points =
        rng.uniform_int(int(cfg.lookup_control_points.lo), int(cfg.lookup_control_points.hi));
    const auto table = smooth_lookup(rng, params.control_points);
    return {remap_through_lookup(vol, table), params};
}

// Renders a noise-free, piecewise-constant image from the label map: every
// distinct label ID present (left/right partners, blobs, and non-brain IDs
// all count separately) gets an independent mean drawn uniformly from the
// label-intensity range. Means are drawn in ascending ID order.
inline Volume synth_from_labels(const LabelMap& lm, Rng& rng, const EngineConfig& cfg) {
    std::set<std::uint32_t> ids(lm.data.begin(), lm.data.end());
    std::map<std::uint32_t, float> mean;
    for (std::uint32_t id : ids)
        mean[id] = float(rng.uniform(cfg.label_intensity.lo, cfg.label_intensity.hi));
    Volume out = Volume::zeros(lm.shape, lm.spacing, lm.affine);
    for (std::size_t i = 0; i < lm.data.size(); ++i) out.data[i] = mean[lm.data[i]];
    return out;
}

} // namespace babyseg

#endif // BABYSEG_SYNTH_HPP
