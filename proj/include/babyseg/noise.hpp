#ifndef BABYSEG_NOISE_HPP
#define BABYSEG_NOISE_HPP

#include <array>
#include <cmath>
#include <vector>

#include "babyseg/rng.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

// Coarse control lattice destined for trilinear upsampling onto a target
// grid. Scalar fields use one ControlField; vector fields use one per
// component.
struct ControlField {
    IVec3 resolution{2, 2, 2}; // control points per axis, >= 2 each
    IVec3 target_shape{1, 1, 1};
    std::vector<float> values;

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (resolution[a] < 2)
                throw std::invalid_argument("ControlField: resolution must be >= 2 per axis");
            if (target_shape[a] <= 0)
                throw std::invalid_argument("ControlField: target shape must be positive");
        }
        if (values.size() != std::size_t(resolution[0]) * std::size_t(resolution[1]) *
                                 std::size_t(resolution[2]))
            throw std::invalid_argument("ControlField: value count does not match resolution");
    }
};

// Trilinear upsampling of a control lattice to the target shape. Control
// point i on an axis of c points maps to target coordinate i * (S-1) / (c-1),
// so c equal to the axis extent degenerates to the raw lattice.
inline Volume upsample_lattice(const std::vector<float>& lattice, const IVec3& c,
                               const IVec3& shape) {
    for (int a = 0; a < 3; ++a) {
        if (c[a] < 2) throw std::invalid_argument("upsample_lattice: control_points must be >= 2");
        if (shape[a] <= 0) throw std::invalid_argument("upsample_lattice: shape must be positive");
    }
    if (lattice.size() != std::size_t(c[0]) * std::size_t(c[1]) * std::size_t(c[2]))
        throw std::invalid_argument("upsample_lattice: lattice size mismatch");
    const auto lat = [&](int i, int j, int k) {
        return lattice[(std::size_t(i) * std::size_t(c[1]) + std::size_t(j)) * std::size_t(c[2]) +
                       std::size_t(k)];
    };

    Volume out = Volume::zeros(shape);
    std::array<std::vector<int>, 3> i0;
    std::array<std::vector<double>, 3> fr;
    for (int a = 0; a < 3; ++a) {
        i0[a].resize(std::size_t(shape[a]));
        fr[a].resize(std::size_t(shape[a]));
        const double scale = shape[a] > 1 ? double(c[a] - 1) / double(shape[a] - 1) : 0.0;
        for (int x = 0; x < shape[a]; ++x) {
            double u = x * scale;
            int i = int(std::floor(u));
            if (i >= c[a] - 1) i = c[a] - 2; // keep u = c-1 inside the last cell
            i0[a][std::size_t(x)] = i;
            fr[a][std::size_t(x)] = u - i;
        }
    }
    std::size_t idx = 0;
    for (int x = 0; x < shape[0]; ++x) {
        const int ix = i0[0][std::size_t(x)];
        const double fx = fr[0][std::size_t(x)];
        for (int y = 0; y < shape[1]; ++y) {
            const int iy = i0[1][std::size_t(y)];
            const double fy = fr[1][std::size_t(y)];
            for (int z = 0; z < shape[2]; ++z, ++idx) {
                const int iz = i0[2][std::size_t(z)];
                const double fz = fr[2][std::size_t(z)];
                const double c00 = lat(ix, iy, iz) * (1 - fx) + lat(ix + 1, iy, iz) * fx;
                const double c10 = lat(ix, iy + 1, iz) * (1 - fx) + lat(ix + 1, iy + 1, iz) * fx;
                const double c01 = lat(ix, iy, iz + 1) * (1 - fx) + lat(ix + 1, iy, iz + 1) * fx;
                const double c11 = lat(ix, iy + 1, iz + 1) * (1 - fx) + lat(ix + 1, iy + 1, iz + 1) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.data[idx] = float(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

inline Volume upsample(const ControlField& field) {
    field.validate();
    return upsample_lattice(field.values, field.resolution, field.target_shape);
}

// Smooth scalar field in [-1, 1]: control values uniform in [-1, 1] on a
// coarse lattice, trilinearly upsampled to the target shape.
inline Volume gradient_noise(Rng& rng, const IVec3& shape, const IVec3& control_points) {
    ControlField field;
    field.resolution = control_points;
    field.target_shape = shape;
    for (int a = 0; a < 3; ++a)
        if (control_points[a] < 2)
            throw std::invalid_argument("gradient_noise: control_points must be >= 2");
    field.values.resize(std::size_t(control_points[0]) * std::size_t(control_points[1]) *
                        std::size_t(control_points[2]));
    for (auto& v : field.values) v = float(rng.uniform(-1.0, 1.0));
    return upsample(field);
}

inline Volume gradient_noise(Rng& rng, const IVec3& shape, int control_points) {
    return gradient_noise(rng, shape, IVec3{control_points, control_points, control_points});
}

inline std::array<float, 256> smooth_lookup_from_controls(const std::vector<double>& controls) {
    const int n = int(controls.size());
    if (n < 2) throw std::invalid_argument("smooth_lookup: need at least 2 controls");
    std::array<float, 256> table{};
    const double step = 255.0 / double(n - 1);
    for (int i = 0; i < 256; ++i) {
        double u = double(i) / step;
        int j = int(std::floor(u));
        if (j >= n - 1) j = n - 2;
        const double f = u - j;
        table[std::size_t(i)] = float(controls[std::size_t(j)] * (1 - f) + controls[std::size_t(j) + 1] * f);
    }
    return table;
}

// Smooth lookup table of 256 entries: control values uniform in [0, 1] are
// placed evenly over the index range [0, 255] and linearly interpolated.
inline std::array<float, 256> smooth_lookup(Rng& rng, int control_points) {
    if (control_points < 2 || control_points > 256)
        throw std::invalid_argument("smooth_lookup: control_points must be in [2, 256]");
    std::vector<double> controls(static_cast<std::size_t>(control_points));
    for (auto& v : controls) v = rng.uniform();
    return smooth_lookup_from_controls(controls);
}

// Three independent gradient-noise components scaled so the maximum vector
// norm over the grid equals max_magnitude_mm (zero field stays zero).
inline std::array<Volume, 3> smooth_vector_field(Rng& rng, const IVec3& shape,
                                                 const IVec3& control_points,
                                                 double max_magnitude_mm) {
    if (max_magnitude_mm < 0.0)
        throw std::invalid_argument("smooth_vector_field: negative magnitude");
    std::array<Volume, 3> field = {gradient_noise(rng, shape, control_points),
                                   gradient_noise(rng, shape, control_points),
                                   gradient_noise(rng, shape, control_points)};
    double max_norm2 = 0.0;
    for (std::size_t i = 0; i < field[0].data.size(); ++i) {
        const double nx = field[0].data[i], ny = field[1].data[i], nz = field[2].data[i];
        max_norm2 = std::max(max_norm2, nx * nx + ny * ny + nz * nz);
    }
    if (max_magnitude_mm == 0.0 || max_norm2 == 0.0) {
        for (auto& comp : field) std::fill(comp.data.begin(), comp.data.end(), 0.0f);
        return field;
    }
    const double scale = max_magnitude_mm / std::sqrt(max_norm2);
    for (auto& comp : field)
        for (auto& v : comp.data) v = float(v * scale);
    return field;
}

} // namespace babyseg

#endif // BABYSEG_NOISE_HPP
