#ifndef BABYSEG_CORRUPT_HPP
#define BABYSEG_CORRUPT_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "babyseg/config.hpp"
#include "babyseg/morphology.hpp"
#include "babyseg/noise.hpp"
#include "babyseg/rng.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

// Ordered record of every corruption step applied to one channel with its
// sampled parameters. stream_seed is the rng state at entry, so replaying
// the chain from it reproduces the channel bitwise.
struct CorruptionTrace {
    std::uint64_t stream_seed = 0;
    nlohmann::json steps = nlohmann::json::array();
};

// ---- deterministic kernels -------------------------------------------------

// Multiplies by a field and clamps to [0, 1].
inline Volume apply_bias(const Volume& vol, const Volume& field) {
    if (field.shape != vol.shape) throw std::invalid_argument("apply_bias: geometry mismatch");
    Volume out = vol;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(out.data[i] * field.data[i], 0.0f, 1.0f);
    return out;
}

// Min-max rescale of a noise field into [lo, hi]; a constant field maps to
// all ones (no modulation).
inline Volume rescale_field(const Volume& field, double lo, double hi) {
    float fmin = field.data[0], fmax = field.data[0];
    for (float v : field.data) {
        fmin = std::min(fmin, v);
        fmax = std::max(fmax, v);
    }
    Volume out = field;
    if (!(fmax > fmin)) {
        std::fill(out.data.begin(), out.data.end(), 1.0f);
        return out;
    }
    const double scale = (hi - lo) / (double(fmax) - double(fmin));
    for (auto& v : out.data) v = float(lo + (double(v) - double(fmin)) * scale);
    return out;
}

// Separable Gaussian with per-axis sigma in voxel units. Kernels truncate at
// ceil(3 sigma) and renormalize over in-bounds taps, so constants pass
// through unchanged. Sigmas below 0.1 / 2.3548 voxels are skipped.
inline Volume gaussian_blur(const Volume& vol, const Vec3& sigma_voxels) {
    Volume cur = vol;
    for (int axis = 0; axis < 3; ++axis) {
        const double sigma = sigma_voxels[axis];
        if (!(sigma > 0.0)) continue;
        const int radius = int(std::ceil(3.0 * sigma));
        std::vector<double> kernel(std::size_t(2 * radius + 1));
        double total = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            kernel[std::size_t(i + radius)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
            total += kernel[std::size_t(i + radius)];
        }
        for (auto& k : kernel) k /= total;
        Volume next = cur;
        const IVec3 s = cur.shape;
        for (int x = 0; x < s[0]; ++x)
            for (int y = 0; y < s[1]; ++y)
                for (int z = 0; z < s[2]; ++z) {
                    double acc = 0.0, wsum = 0.0;
                    for (int i = -radius; i <= radius; ++i) {
                        int xi = x, yi = y, zi = z;
                        (axis == 0 ? xi : axis == 1 ? yi : zi) += i;
                        if (!cur.in_bounds(xi, yi, zi)) continue;
                        const double w = kernel[std::size_t(i + radius)];
                        acc += w * cur.at(xi, yi, zi);
                        wsum += w;
                    }
                    next.at(x, y, z) = float(acc / wsum);
                }
        cur = std::move(next);
    }
    return cur;
}

// Replaces the listed slices along an axis with a constant value.
inline Volume fill_slices_at(const Volume& vol, int axis, const std::vector<int>& indices,
                             float value) {
    Volume out = vol;
    const IVec3 s = vol.shape;
    for (int idx : indices)
        for (int u = 0; u < (axis == 0 ? s[1] : s[0]); ++u)
            for (int v = 0; v < (axis == 2 ? s[1] : s[2]); ++v) {
                if (axis == 0) out.at(idx, u, v) = value;
                else if (axis == 1) out.at(u, idx, v) = value;
                else out.at(u, v, idx) = value;
            }
    return out;
}

// Thick-slice simulation: linear downsampling along one axis by a real
// factor, then nearest re-upsampling to the original extent. Coordinates
// clamp at the ends so edges do not darken.
inline Volume downsample_axis_by(const Volume& vol, int axis, double factor) {
    const int n = vol.shape[axis];
    const int n2 = std::max(1, int(std::floor(double(n) / factor + 0.5)));
    if (n2 >= n) return vol;

    // low-resolution sample positions, then nearest source row per output row
    std::vector<double> src_of(static_cast<std::size_t>(n2));
    for (int j = 0; j < n2; ++j)
        src_of[std::size_t(j)] = std::clamp((j + 0.5) * factor - 0.5, 0.0, double(n - 1));
    std::vector<int> up_of(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = (i + 0.5) / factor - 0.5;
        up_of[std::size_t(i)] = std::clamp(int(std::floor(u + 0.5)), 0, n2 - 1);
    }

    Volume out = vol;
    const IVec3 s = vol.shape;
    const int nu = axis == 0 ? s[1] : s[0];
    const int nv = axis == 2 ? s[1] : s[2];
    auto fetch = [&](int line, int u, int v) -> float {
        if (axis == 0) return vol.at(line, u, v);
        if (axis == 1) return vol.at(u, line, v);
        return vol.at(u, v, line);
    };
    std::vector<float> low(static_cast<std::size_t>(n2));
    for (int u = 0; u < nu; ++u)
        for (int v = 0; v < nv; ++v) {
            for (int j = 0; j < n2; ++j) {
                const double p = src_of[std::size_t(j)];
                const int p0 = int(std::floor(p));
                const int p1 = std::min(p0 + 1, n - 1);
                const double f = p - p0;
                low[std::size_t(j)] = float((1 - f) * fetch(p0, u, v) + f * fetch(p1, u, v));
            }
            for (int i = 0; i < n; ++i) {
                const float val = low[std::size_t(up_of[std::size_t(i)])];
                if (axis == 0) out.at(i, u, v) = val;
                else if (axis == 1) out.at(u, i, v) = val;
                else out.at(u, v, i) = val;
            }
        }
    return out;
}

// Zeroes floor(fraction * extent) voxels from one side of an axis; the grid
// shape itself is unchanged.
inline Volume crop_axis(const Volume& vol, int axis, double fraction, bool from_high_side) {
    Volume out = vol;
    const IVec3 s = vol.shape;
    const int count = std::clamp(int(std::floor(fraction * double(s[axis]))), 0, s[axis]);
    if (count == 0) return out;
    const int lo = from_high_side ? s[axis] - count : 0;
    const int hi = from_high_side ? s[axis] : count;
    for (int x = (axis == 0 ? lo : 0); x < (axis == 0 ? hi : s[0]); ++x)
        for (int y = (axis == 1 ? lo : 0); y < (axis == 1 ? hi : s[1]); ++y)
            for (int z = (axis == 2 ? lo : 0); z < (axis == 2 ? hi : s[2]); ++z)
                out.at(x, y, z) = 0.0f;
    return out;
}

inline Volume min_max_rescale(const Volume& vol) {
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
    const float scale = 1.0f / (hi - lo);
    for (auto& v : out.data) v = (v - lo) * scale;
    return out;
}

// ---- randomized steps ------------------------------------------------------

inline Volume bias_field(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                         nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.bias_drop.p);
    if (!applied) {
        if (record) *record = {{"step", "bias_field"}, {"applied", false}};
        return vol;
    }
    const double drop = rng.uniform(cfg.bias_drop.lo, cfg.bias_drop.hi);
    IVec3 cp;
    for (int a = 0; a < 3; ++a)
        cp[a] = rng.uniform_int(int(cfg.bias_control_points.lo), int(cfg.bias_control_points.hi));
    const Volume noise = gradient_noise(rng, vol.shape, cp);
    const double hi = cfg.bias_symmetric_gain ? 1.0 + drop : 1.0;
    const Volume field = rescale_field(noise, 1.0 - drop, hi);
    if (record)
        *record = {{"step", "bias_field"}, {"applied", true}, {"drop", drop}, {"control_points", cp}};
    return apply_bias(vol, field);
}

inline Volume blur(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                   nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.blur_fwhm_mm.p);
    if (!applied) {
        if (record) *record = {{"step", "blur"}, {"applied", false}};
        return vol;
    }
    Vec3 fwhm, sigma;
    for (int a = 0; a < 3; ++a) {
        fwhm[a] = rng.uniform(cfg.blur_fwhm_mm.lo, cfg.blur_fwhm_mm.hi);
        // FWHM below one tenth of a voxel degenerates to the identity
        sigma[a] = fwhm[a] < 0.1 * vol.spacing[a] ? 0.0 : fwhm[a] / (2.3548 * vol.spacing[a]);
    }
    if (record) *record = {{"step", "blur"}, {"applied", true}, {"fwhm_mm", fwhm}};
    return gaussian_blur(vol, sigma);
}

inline Volume add_noise(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                        nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.noise_sd.p);
    if (!applied) {
        if (record) *record = {{"step", "add_noise"}, {"applied", false}};
        return vol;
    }
    const double sd = rng.uniform(cfg.noise_sd.lo, cfg.noise_sd.hi);
    if (record) *record = {{"step", "add_noise"}, {"applied", true}, {"sd", sd}};
    if (sd == 0.0) return vol;
    Volume out = vol;
    for (auto& v : out.data) v = std::clamp(v + float(sd * rng.gaussian()), 0.0f, 1.0f);
    return out;
}

inline Volume fill_slices(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                          nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.slice_count.p);
    if (!applied) {
        if (record) *record = {{"step", "fill_slices"}, {"applied", false}};
        return vol;
    }
    const int axis = rng.uniform_int(0, 2);
    const int want = rng.uniform_int(int(cfg.slice_count.lo), int(cfg.slice_count.hi));
    const int count = std::min(want, vol.shape[axis]);
    // sample slice indices without replacement
    std::vector<int> pool(static_cast<std::size_t>(vol.shape[axis]));
    for (int i = 0; i < vol.shape[axis]; ++i) pool[std::size_t(i)] = i;
    std::vector<int> indices;
    for (int k = 0; k < count; ++k) {
        const int j = rng.uniform_int(k, vol.shape[axis] - 1);
        std::swap(pool[std::size_t(k)], pool[std::size_t(j)]);
        indices.push_back(pool[std::size_t(k)]);
    }
    const float value = float(rng.uniform(cfg.slice_intensity.lo, cfg.slice_intensity.hi));
    if (record)
        *record = {{"step", "fill_slices"}, {"applied", true}, {"axis", axis},
                   {"indices", indices}, {"value", value}};
    return fill_slices_at(vol, axis, indices, value);
}

inline Volume downsample_axis(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                              nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.downsample_factor.p);
    if (!applied) {
        if (record) *record = {{"step", "downsample_axis"}, {"applied", false}};
        return vol;
    }
    const int axis = rng.uniform_int(0, 2);
    const double factor = rng.uniform(cfg.downsample_factor.lo, cfg.downsample_factor.hi);
    if (record)
        *record = {{"step", "downsample_axis"}, {"applied", true}, {"axis", axis}, {"factor", factor}};
    if (factor <= 1.0) return vol;
    return downsample_axis_by(vol, axis, factor);
}

inline Volume gamma(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                    nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.gamma_exponent.p);
    if (!applied) {
        if (record) *record = {{"step", "gamma"}, {"applied", false}};
        return vol;
    }
    const double exponent = rng.uniform(cfg.gamma_exponent.lo, cfg.gamma_exponent.hi);
    if (record) *record = {{"step", "gamma"}, {"applied", true}, {"exponent", exponent}};
    Volume out = vol;
    for (auto& v : out.data) v = std::pow(std::max(v, 0.0f), float(exponent));
    return out;
}

inline Volume crop_fov(const Volume& vol, Rng& rng, const EngineConfig& cfg,
                       nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.crop_fraction.p);
    if (!applied) {
        if (record) *record = {{"step", "crop_fov"}, {"applied", false}};
        return vol;
    }
    Vec3 fractions;
    std::array<bool, 3> high_side{};
    Volume out = vol;
    for (int a = 0; a < 3; ++a) {
        fractions[a] = rng.uniform(cfg.crop_fraction.lo, cfg.crop_fraction.hi);
        high_side[std::size_t(a)] = rng.bernoulli(0.5);
        out = crop_axis(out, a, fractions[a], high_side[std::size_t(a)]);
    }
    if (record)
        *record = {{"step", "crop_fov"}, {"applied", true}, {"fractions", fractions},
                   {"high_side", high_side}};
    return out;
}

// Inclusive bounds of the erosion delta given the dilation count.
inline std::pair<int, int> erosion_delta_range(int n_dilate, const EngineConfig& cfg) {
    return {std::max(-n_dilate, int(cfg.skullstrip_erosion_delta.lo)),
            std::min(n_dilate, int(cfg.skullstrip_erosion_delta.hi))};
}

// Simulated skull-stripping with over- and undersegmentation: the brain-label
// union is hole-filled (gated), dilated n_dilate times and eroded
// n_dilate - delta times, then multiplied into the image. Off-trigger the
// mask is all ones.
inline std::pair<Volume, BrainMask> simulate_skullstrip(const Volume& vol, const LabelMap& lm,
                                                        Rng& rng, const EngineConfig& cfg,
                                                        nlohmann::json* record = nullptr) {
    const bool applied = rng.bernoulli(cfg.skullstrip.p);
    if (!applied) {
        if (record) *record = {{"step", "skullstrip"}, {"applied", false}};
        return {vol, BrainMask::ones(vol.shape, vol.spacing, vol.affine)};
    }
    const bool hole_fill = rng.bernoulli(cfg.skullstrip_hole_fill.p);
    const int n_dilate =
        rng.uniform_int(int(cfg.skullstrip_dilate.lo), int(cfg.skullstrip_dilate.hi));
    const auto [dlo, dhi] = erosion_delta_range(n_dilate, cfg);
    const int delta = rng.uniform_int(dlo, dhi);
    const int n_erode = n_dilate - delta;

    BrainMask mask = brain_union(lm);
    if (hole_fill) mask = morph::fill_holes(mask);
    mask = morph::dilate(std::move(mask), n_dilate);
    mask = morph::erode(std::move(mask), n_erode);

    if (record)
        *record = {{"step", "skullstrip"}, {"applied", true}, {"hole_fill", hole_fill},
                   {"dilate", n_dilate}, {"erosion_delta", delta}};
    Volume out = vol;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (!mask.data[i]) out.data[i] = 0.0f;
    return {std::move(out), std::move(mask)};
}

// ---- full chain ------------------------------------------------------------

// Applies the corruption steps in fixed order (skull-strip last, so it sees
// the final intensity image), renormalizes to [0, 1], and emits the trace.
inline std::tuple<Volume, BrainMask, CorruptionTrace> corrupt_channel(const Volume& vol,
                                                                      const LabelMap& lm, Rng rng,
                                                                      const EngineConfig& cfg) {
    CorruptionTrace trace;
    trace.stream_seed = rng.state();
    auto step = [&trace]() -> nlohmann::json* {
        trace.steps.push_back(nlohmann::json::object());
        return &trace.steps.back();
    };
    Volume cur = bias_field(vol, rng, cfg, step());
    cur = blur(cur, rng, cfg, step());
    cur = add_noise(cur, rng, cfg, step());
    cur = fill_slices(cur, rng, cfg, step());
    cur = downsample_axis(cur, rng, cfg, step());
    cur = gamma(cur, rng, cfg, step());
    cur = crop_fov(cur, rng, cfg, step());
    auto [stripped, mask] = simulate_skullstrip(cur, lm, rng, cfg, step());
    return {min_max_rescale(stripped), std::move(mask), std::move(trace)};
}

// Replays a recorded trace by rerunning the chain from its stream seed.
inline std::tuple<Volume, BrainMask, CorruptionTrace> corrupt_channel_replay(
    const Volume& vol, const LabelMap& lm, const CorruptionTrace& trace, const EngineConfig& cfg) {
    return corrupt_channel(vol, lm, Rng(trace.stream_seed), cfg);
}

} // namespace babyseg

#endif // BABYSEG_CORRUPT_HPP
