#ifndef BABYSEG_TOY_HPP
#define BABYSEG_TOY_HPP

#include <cmath>

#include "babyseg/corrupt.hpp"
#include "babyseg/engine.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

// Desk-scale overfit experiment: a procedurally built 48^3 session with six
// bilateral structures and one acquired-style rendering, plus an engine
// config whose spatial and corruption magnitudes are scaled to the 48 mm FOV.
// The training gate in the acceptance suite runs on exactly this session.

// network size used by the toy overfit gate
constexpr int kToyLevels = 4;
constexpr int kToyFilters = 12;

inline LabelProtocol toy_protocol() {
    const LabelProtocol& full = babyseg_protocol();
    LabelProtocol p;
    p.name = "babyseg-toy-7";
    p.version = 1;
    for (std::uint32_t id : {0u, 1u, 2u, 3u, 4u, 9u, 10u}) p.labels.push_back(full.find(id));
    return p;
}

inline LoadedSession make_toy_session(int extent = 48, std::uint64_t seed = 2024) {
    LoadedSession s;
    s.id = "toy48";
    const IVec3 shape{extent, extent, extent};
    const GridSpec grid{shape, {1, 1, 1}, "LIA"};
    const Mat4 affine = grid_affine(grid);
    s.labels = LabelMap::zeros(shape, {1, 1, 1}, affine, toy_protocol());

    // Deliberately asymmetric anatomy: the two hemispheres differ in size,
    // shell thickness, and nucleus shape, so each of the six structures is
    // identifiable from local geometry. Lateral flipping stays off in the toy
    // config; with symmetric shapes and flipping, left/right would be defined
    // by position alone, which a small network cannot resolve in 2000 steps.
    const double c = (extent - 1) / 2.0;
    auto ellipse = [&](double x, double y, double z, double cx, double cy, double cz, double rx,
                       double ry, double rz) {
        const double ex = (x - cx) / rx, ey = (y - cy) / ry, ez = (z - cz) / rz;
        return ex * ex + ey * ey + ez * ez;
    };
    const double e = extent;
    const double lx = c - e * 0.175, rxc = c + e * 0.165;
    for (int x = 0; x < extent; ++x)
        for (int y = 0; y < extent; ++y)
            for (int z = 0; z < extent; ++z) {
                // left hemisphere: larger and flatter; right: smaller and
                // rounder; both shells are several voxels thick so the
                // half-resolution fusion stage can still trace them
                const double lo = ellipse(x, y, z, lx, c, c, e * 0.25, e * 0.36, e * 0.33);
                const double li = ellipse(x, y, z, lx, c, c, e * 0.16, e * 0.26, e * 0.23);
                const double ro = ellipse(x, y, z, rxc, c, c, e * 0.22, e * 0.31, e * 0.29);
                const double ri = ellipse(x, y, z, rxc, c, c, e * 0.13, e * 0.21, e * 0.19);
                // interior bodies: a ball low in the left hemisphere, a tall
                // ellipsoid high in the right one
                const double ln = ellipse(x, y, z, lx, c + e * 0.05, c - e * 0.04, e * 0.13,
                                          e * 0.13, e * 0.12);
                const double rn = ellipse(x, y, z, rxc, c - e * 0.04, c + e * 0.03, e * 0.10,
                                          e * 0.11, e * 0.14);
                if (ln <= 1.0 && li <= 1.0) s.labels.at(x, y, z) = 9;
                else if (rn <= 1.0 && ri <= 1.0) s.labels.at(x, y, z) = 10;
                else if (li <= 1.0) s.labels.at(x, y, z) = 1;  // left white matter
                else if (ri <= 1.0) s.labels.at(x, y, z) = 2;  // right white matter
                else if (lo <= 1.0) s.labels.at(x, y, z) = 3;  // left shell
                else if (ro <= 1.0) s.labels.at(x, y, z) = 4;  // right shell
            }

    // acquired-style rendering: fixed per-structure means, mild smoothing,
    // low-amplitude noise
    Volume img = Volume::zeros(shape, {1, 1, 1}, affine);
    Rng rng(seed);
    std::map<std::uint32_t, float> mean = {{0, 0.05f}, {1, 0.75f}, {2, 0.72f}, {3, 0.45f},
                                           {4, 0.48f}, {9, 0.90f}, {10, 0.88f}};
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = mean[s.labels.data[i]];
    img = gaussian_blur(img, {0.6, 0.6, 0.6});
    for (auto& v : img.data) v = std::clamp(v + float(0.015 * rng.gaussian()), 0.0f, 1.0f);
    s.images.push_back(std::move(img));
    return s;
}

// Table-style randomization scaled to the toy FOV. Every range stays inside
// its full-scale counterpart.
inline EngineConfig toy_config(int extent = 48) {
    EngineConfig cfg;
    cfg.grid = GridSpec{{extent, extent, extent}, {1, 1, 1}, "LIA"};
    cfg.translation_mm = {-3, 3, 1.0};
    cfg.rotation_deg = {-12, 12, 1.0};
    cfg.scaling = {0.96, 1.04, 1.0};
    cfg.shear = {0.98, 1.02, 1.0};
    cfg.warp_mm = {0, 2, 1.0};
    cfg.warp_control_points = {2, 5, 1.0};
    cfg.flip = {0, 0, 0.0}; // see make_toy_session: the toy anatomy is chirality-coded
    cfg.blob_count = {1, 2, 0.25};
    cfg.blob_control_points = {2, 4, 1.0};
    cfg.blob_threshold = {0, 0.5, 1.0};
    cfg.channel_count = {1, 2, 1.0};
    cfg.real_channels = {1, 1, 0.7};
    cfg.label_intensity = {0, 1, 1.0};
    cfg.lookup_control_points = {2, 8, 0.25};
    cfg.bias_drop = {0, 0.15, 1.0};
    cfg.bias_control_points = {2, 4, 1.0};
    cfg.blur_fwhm_mm = {0, 1.0, 1.0};
    cfg.noise_sd = {0, 0.03, 1.0};
    cfg.slice_count = {1, 1, 0.2};
    cfg.slice_intensity = {0, 1, 1.0};
    cfg.downsample_factor = {1, 1.8, 0.2};
    cfg.gamma_exponent = {0.85, 1.2, 1.0};
    cfg.crop_fraction = {0, 0.08, 0.2};
    cfg.skullstrip = {0, 0, 0.2};
    cfg.skullstrip_dilate = {0, 1, 1.0};
    cfg.skullstrip_erosion_delta = {-1, 1, 1.0};
    cfg.skullstrip_hole_fill = {0, 0, 0.5};
    return cfg;
}

// Evaluation variant of a config: every corruption-chain gate probability
// halved. Augmentation and channel-plan gates are not corruptions and stay.
inline EngineConfig halve_corruption_probabilities(EngineConfig cfg) {
    for (RangeP* row : {&cfg.bias_drop, &cfg.blur_fwhm_mm, &cfg.noise_sd, &cfg.slice_count,
                        &cfg.downsample_factor, &cfg.gamma_exponent, &cfg.crop_fraction,
                        &cfg.skullstrip, &cfg.skullstrip_hole_fill})
        row->p *= 0.5;
    return cfg;
}

} // namespace babyseg

#endif // BABYSEG_TOY_HPP
