#ifndef BABYSEG_AUGMENT_HPP
#define BABYSEG_AUGMENT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "babyseg/config.hpp"
#include "babyseg/noise.hpp"
#include "babyseg/resample.hpp"
#include "babyseg/rng.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

// Sampled global transform components. Scale and shear are multiplicative
// factors with 1 as the identity (shear factor s maps to off-diagonal s - 1).
struct AffineParams {
    Vec3 translation_mm{0, 0, 0};
    Vec3 rotation_deg{0, 0, 0};
    Vec3 scale{1, 1, 1};
    Vec3 shear{1, 1, 1};

    // World-space matrix composed as T * R * S * Sh pivoted at `center`,
    // with R = Rz * Ry * Rx. Maps output world coordinates to the world
    // coordinates sampled from the input.
    Mat4 matrix(const Vec3& center) const {
        const Mat4 rot = rotation_z(rotation_deg[2]) * rotation_y(rotation_deg[1]) * rotation_x(rotation_deg[0]);
        const Mat4 core = Mat4::translation(translation_mm) * rot * Mat4::scaling(scale) * shear_matrix(shear);
        return Mat4::translation(center) * core * Mat4::translation({-center[0], -center[1], -center[2]});
    }

    bool is_identity() const {
        return translation_mm == Vec3{0, 0, 0} && rotation_deg == Vec3{0, 0, 0} &&
               scale == Vec3{1, 1, 1} && shear == Vec3{1, 1, 1};
    }
};

// Dense spatial transform: world affine plus an optional nonlinear
// displacement field in world mm on the working grid.
struct SpatialTransform {
    Mat4 affine = Mat4::identity();
    std::optional<std::array<Volume, 3>> warp;

    bool is_identity() const {
        if (!(affine == Mat4::identity())) return false;
        if (!warp) return true;
        for (const auto& comp : *warp)
            for (float v : comp.data)
                if (v != 0.0f) return false;
        return true;
    }
};

inline AffineParams sample_affine(Rng& rng, const EngineConfig& cfg) {
    AffineParams p;
    for (int a = 0; a < 3; ++a) {
        p.translation_mm[a] = rng.uniform(cfg.translation_mm.lo, cfg.translation_mm.hi);
        p.rotation_deg[a] = rng.uniform(cfg.rotation_deg.lo, cfg.rotation_deg.hi);
        p.scale[a] = rng.uniform(cfg.scaling.lo, cfg.scaling.hi);
        p.shear[a] = rng.uniform(cfg.shear.lo, cfg.shear.hi);
    }
    return p;
}

struct WarpSample {
    std::array<Volume, 3> field;
    double magnitude_mm = 0.0;
    IVec3 control_points{0, 0, 0};
};

// Smooth displacement field with magnitude uniform in the warp range and
// per-axis control-point counts sampled independently.
inline WarpSample sample_warp(Rng& rng, const IVec3& grid_shape, const EngineConfig& cfg) {
    WarpSample out;
    out.magnitude_mm = rng.uniform(cfg.warp_mm.lo, cfg.warp_mm.hi);
    for (int a = 0; a < 3; ++a)
        out.control_points[a] =
            rng.uniform_int(int(cfg.warp_control_points.lo), int(cfg.warp_control_points.hi));
    out.field = smooth_vector_field(rng, grid_shape, out.control_points, out.magnitude_mm);
    return out;
}

// Resamples every image (trilinear) and the label map (nearest) through one
// shared transform: output voxel -> world -> +warp -> affine -> source voxel.
// Warp and affine compose into a single pass, so nothing is interpolated
// twice. The exact identity transform short-circuits to a copy.
inline std::pair<GroupBatch, LabelMap> apply_transform(const GroupBatch& vols, const LabelMap& lm,
                                                       const SpatialTransform& t) {
    check_group_geometry(vols, lm);
    if (t.is_identity()) return {vols, lm};
    if (t.warp)
        for (const auto& comp : *t.warp)
            if (comp.shape != lm.shape)
                throw std::invalid_argument("apply_transform: warp geometry does not match grid");

    const Mat4 vox_to_world = lm.affine;
    const Mat4 world_to_vox = affine_inverse(lm.affine);
    const Mat4 direct = world_to_vox * t.affine * vox_to_world; // used when no warp

    auto src_coord = [&](int x, int y, int z) -> Vec3 {
        if (!t.warp) return transform_point(direct, {double(x), double(y), double(z)});
        Vec3 w = transform_point(vox_to_world, {double(x), double(y), double(z)});
        const std::size_t i = lm.index(x, y, z);
        w[0] += (*t.warp)[0].data[i];
        w[1] += (*t.warp)[1].data[i];
        w[2] += (*t.warp)[2].data[i];
        return transform_point(world_to_vox, transform_point(t.affine, w));
    };

    GroupBatch out_vols;
    out_vols.reserve(vols.size());
    for (const auto& vol : vols) {
        Volume o = vol;
        std::size_t idx = 0;
        for (int x = 0; x < lm.shape[0]; ++x)
            for (int y = 0; y < lm.shape[1]; ++y)
                for (int z = 0; z < lm.shape[2]; ++z, ++idx) {
                    const Vec3 s = src_coord(x, y, z);
                    o.data[idx] = detail::sample_trilinear(vol, s[0], s[1], s[2]);
                }
        out_vols.push_back(std::move(o));
    }
    LabelMap out_lm = lm;
    std::size_t idx = 0;
    for (int x = 0; x < lm.shape[0]; ++x)
        for (int y = 0; y < lm.shape[1]; ++y)
            for (int z = 0; z < lm.shape[2]; ++z, ++idx) {
                const Vec3 s = src_coord(x, y, z);
                out_lm.data[idx] = detail::sample_nearest(lm, s[0], s[1], s[2]);
            }
    return {std::move(out_vols), std::move(out_lm)};
}

struct BlobParams {
    bool applied = false;
    int count = 0;
    double threshold = 0.0;
    IVec3 control_points{0, 0, 0};
};

// Deterministic core of blob synthesis: thresholds the noise field and
// rank-partitions the surviving background intensities into `count`
// equal-size bins (ties broken by flat voxel index). Only background voxels
// change; bin j becomes transient ID kBlobLabelBase + j.
inline LabelMap synth_blobs_from_field(const LabelMap& lm, const Volume& field, double threshold,
                                       int count) {
    if (count < 1) return lm;
    if (field.shape != lm.shape)
        throw std::invalid_argument("synth_blobs: field geometry does not match label map");
    std::vector<std::pair<float, std::size_t>> survivors;
    for (std::size_t i = 0; i < lm.data.size(); ++i) {
        if (lm.data[i] != 0) continue;
        const float f = field.data[i];
        if (f != 0.0f && std::abs(f) >= threshold) survivors.emplace_back(f, i);
    }
    LabelMap out = lm;
    if (survivors.empty()) return out;
    std::sort(survivors.begin(), survivors.end());
    const std::size_t m = survivors.size();
    for (int j = 0; j < count; ++j) {
        const std::size_t lo = std::size_t(j) * m / std::size_t(count);
        const std::size_t hi = std::size_t(j + 1) * m / std::size_t(count);
        for (std::size_t r = lo; r < hi; ++r)
            out.data[survivors[r].second] = kBlobLabelBase + std::uint32_t(j);
    }
    return out;
}

// Replaces part of the label-map background with geometric shape labels drawn
// from thresholded gradient noise. Gated at the blob-count probability; the
// text variant draws the count from U{0..3} with no gate.
inline std::pair<LabelMap, BlobParams> synth_blobs(Rng& rng, const LabelMap& lm,
                                                   const EngineConfig& cfg) {
    BlobParams params;
    if (cfg.blob_count_text_variant) {
        params.count = rng.uniform_int(0, 3);
        params.applied = params.count > 0;
    } else {
        params.applied = rng.bernoulli(cfg.blob_count.p);
        if (params.applied)
            params.count = rng.uniform_int(int(cfg.blob_count.lo), int(cfg.blob_count.hi));
    }
    if (!params.applied || params.count < 1) return {lm, params};
    for (int a = 0; a < 3; ++a)
        params.control_points[a] =
            rng.uniform_int(int(cfg.blob_control_points.lo), int(cfg.blob_control_points.hi));
    const Volume field = gradient_noise(rng, lm.shape, params.control_points);
    params.threshold = rng.uniform(cfg.blob_threshold.lo, cfg.blob_threshold.hi);
    return {synth_blobs_from_field(lm, field, params.threshold, params.count), params};
}

// Buffer axis whose world direction is closest to the left-right axis
// (world x in RAS coordinates).
inline int lateral_axis(const Mat4& affine) {
    int best = 0;
    double best_mag = -1.0;
    for (int a = 0; a < 3; ++a) {
        const double mag = std::abs(affine.at(0, a));
        if (mag > best_mag) {
            best_mag = mag;
            best = a;
        }
    }
    return best;
}

namespace detail {

template <typename T>
inline void reverse_axis(Grid3<T>& g, int axis) {
    const IVec3 s = g.shape;
    IVec3 half = s;
    half[axis] = s[axis] / 2;
    for (int x = 0; x < (axis == 0 ? half[0] : s[0]); ++x)
        for (int y = 0; y < (axis == 1 ? half[1] : s[1]); ++y)
            for (int z = 0; z < (axis == 2 ? half[2] : s[2]); ++z) {
                int mx = axis == 0 ? s[0] - 1 - x : x;
                int my = axis == 1 ? s[1] - 1 - y : y;
                int mz = axis == 2 ? s[2] - 1 - z : z;
                std::swap(g.data[g.index(x, y, z)], g.data[g.index(mx, my, mz)]);
            }
}

} // namespace detail

// Mirrors all images and the label map along the left-right buffer axis and
// swaps each lateralized label ID with its partner. Unilateral labels and
// transient IDs pass through.
inline void flip_lateral_inplace(GroupBatch& vols, LabelMap& lm) {
    const int axis = lateral_axis(lm.affine);
    std::map<std::uint32_t, std::uint32_t> swap_table;
    for (const auto& def : lm.protocol.labels) {
        if (def.laterality == Laterality::Left || def.laterality == Laterality::Right) {
            if (def.partner == 0)
                throw DataError("flip_lateral: label '" + def.name + "' has no laterality partner");
            swap_table[def.id] = def.partner;
        }
    }
    for (auto& v : vols) detail::reverse_axis(v, axis);
    detail::reverse_axis(lm, axis);
    for (auto& id : lm.data) {
        auto it = swap_table.find(id);
        if (it != swap_table.end()) id = it->second;
    }
}

inline bool flip_lateral(GroupBatch& vols, LabelMap& lm, Rng& rng, double p) {
    if (!rng.bernoulli(p)) return false;
    flip_lateral_inplace(vols, lm);
    return true;
}

} // namespace babyseg

#endif // BABYSEG_AUGMENT_HPP
