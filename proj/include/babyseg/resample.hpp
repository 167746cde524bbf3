#ifndef BABYSEG_RESAMPLE_HPP
#define BABYSEG_RESAMPLE_HPP

#include <cmath>

#include "babyseg/volume.hpp"

namespace babyseg {

enum class Interp { Trilinear, Nearest };

namespace detail {

// Trilinear sample at a continuous voxel coordinate; samples outside the
// source grid read as 0 (per-corner, so partial overlap fades out).
inline float sample_trilinear(const Volume& vol, double x, double y, double z) {
    const int x0 = int(std::floor(x)), y0 = int(std::floor(y)), z0 = int(std::floor(z));
    const double fx = x - x0, fy = y - y0, fz = z - z0;
    float acc = 0.0f;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
                if (vol.in_bounds(xi, yi, zi)) acc += float(w) * vol.at(xi, yi, zi);
            }
    return acc;
}

template <typename T>
inline T sample_nearest(const Grid3<T>& g, double x, double y, double z) {
    const int xi = int(std::floor(x + 0.5)), yi = int(std::floor(y + 0.5)), zi = int(std::floor(z + 0.5));
    if (!g.in_bounds(xi, yi, zi)) return T(0);
    return g.at(xi, yi, zi);
}

} // namespace detail

// Resamples onto an output grid given the map from output voxel coordinates
// to source voxel coordinates expressed as a 4x4 matrix.
inline Volume resample_voxelmap(const Volume& vol, const IVec3& out_shape, const Vec3& out_spacing,
                                const Mat4& out_affine, const Mat4& out_to_src, Interp interp) {
    Volume out;
    out.shape = out_shape;
    out.spacing = out_spacing;
    out.affine = out_affine;
    out.data.resize(out.voxel_count());
    std::size_t idx = 0;
    for (int x = 0; x < out_shape[0]; ++x)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int z = 0; z < out_shape[2]; ++z, ++idx) {
                const Vec3 s = transform_point(out_to_src, {double(x), double(y), double(z)});
                out.data[idx] = interp == Interp::Trilinear
                                    ? detail::sample_trilinear(vol, s[0], s[1], s[2])
                                    : detail::sample_nearest(vol, s[0], s[1], s[2]);
            }
    return out;
}

inline LabelMap resample_voxelmap(const LabelMap& lm, const IVec3& out_shape, const Vec3& out_spacing,
                                  const Mat4& out_affine, const Mat4& out_to_src) {
    LabelMap out;
    out.shape = out_shape;
    out.spacing = out_spacing;
    out.affine = out_affine;
    out.protocol = lm.protocol;
    out.data.resize(out.voxel_count());
    std::size_t idx = 0;
    for (int x = 0; x < out_shape[0]; ++x)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int z = 0; z < out_shape[2]; ++z, ++idx) {
                const Vec3 s = transform_point(out_to_src, {double(x), double(y), double(z)});
                out.data[idx] = detail::sample_nearest(lm, s[0], s[1], s[2]);
            }
    return out;
}

// Resamples a volume onto a target grid with an explicit target affine.
// Identical geometry short-circuits to a copy, which keeps identity
// resampling bitwise exact.
inline Volume resample(const Volume& vol, const IVec3& target_shape, const Vec3& target_spacing,
                       const Mat4& target_affine, Interp interp) {
    vol.validate();
    if (vol.shape == target_shape && vol.affine == target_affine) {
        Volume out = vol;
        out.spacing = target_spacing;
        return out;
    }
    const Mat4 out_to_src = affine_inverse(vol.affine) * target_affine;
    return resample_voxelmap(vol, target_shape, target_spacing, target_affine, out_to_src, interp);
}

inline LabelMap resample(const LabelMap& lm, const IVec3& target_shape, const Vec3& target_spacing,
                         const Mat4& target_affine) {
    lm.check_valid("LabelMap");
    if (lm.shape == target_shape && lm.affine == target_affine) {
        LabelMap out = lm;
        out.spacing = target_spacing;
        return out;
    }
    const Mat4 out_to_src = affine_inverse(lm.affine) * target_affine;
    return resample_voxelmap(lm, target_shape, target_spacing, target_affine, out_to_src);
}

// Resamples onto a GridSpec whose affine is built to keep the given world
// point at the grid center (defaults to the source FOV center).
inline Volume resample(const Volume& vol, const GridSpec& target, Interp interp) {
    const Mat4 target_affine = grid_affine(target, vol.world_center());
    return resample(vol, target.shape, target.spacing, target_affine, interp);
}

inline LabelMap resample(const LabelMap& lm, const GridSpec& target) {
    const Mat4 target_affine = grid_affine(target, lm.world_center());
    return resample(lm, target.shape, target.spacing, target_affine);
}

} // namespace babyseg

#endif // BABYSEG_RESAMPLE_HPP
