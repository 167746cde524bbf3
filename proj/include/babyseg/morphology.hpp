#ifndef BABYSEG_MORPHOLOGY_HPP
#define BABYSEG_MORPHOLOGY_HPP

#include <cstdint>
#include <vector>

#include "babyseg/volume.hpp"

namespace babyseg {

// Binary mask on the working grid, values in {0, 1}.
struct BrainMask : detail::Grid3<std::uint8_t> {
    static BrainMask ones(const IVec3& shape, const Vec3& spacing = {1, 1, 1},
                          const Mat4& affine = Mat4::identity()) {
        BrainMask m;
        m.shape = shape;
        m.spacing = spacing;
        m.affine = affine;
        m.data.assign(m.voxel_count(), std::uint8_t(1));
        return m;
    }

    static BrainMask zeros_like(const LabelMap& lm) {
        BrainMask m;
        m.shape = lm.shape;
        m.spacing = lm.spacing;
        m.affine = lm.affine;
        m.data.assign(m.voxel_count(), std::uint8_t(0));
        return m;
    }
};

namespace morph {

// One dilation step with the 6-connected (face-adjacent) structuring element.
inline BrainMask dilate(const BrainMask& m) {
    BrainMask out = m;
    const IVec3 s = m.shape;
    for (int x = 0; x < s[0]; ++x)
        for (int y = 0; y < s[1]; ++y)
            for (int z = 0; z < s[2]; ++z) {
                if (m.at(x, y, z)) continue;
                const bool hit = (x > 0 && m.at(x - 1, y, z)) || (x + 1 < s[0] && m.at(x + 1, y, z)) ||
                                 (y > 0 && m.at(x, y - 1, z)) || (y + 1 < s[1] && m.at(x, y + 1, z)) ||
                                 (z > 0 && m.at(x, y, z - 1)) || (z + 1 < s[2] && m.at(x, y, z + 1));
                if (hit) out.at(x, y, z) = 1;
            }
    return out;
}

// One erosion step; voxels beyond the grid edge count as background, so the
// mask also erodes at the boundary.
inline BrainMask erode(const BrainMask& m) {
    BrainMask out = m;
    const IVec3 s = m.shape;
    for (int x = 0; x < s[0]; ++x)
        for (int y = 0; y < s[1]; ++y)
            for (int z = 0; z < s[2]; ++z) {
                if (!m.at(x, y, z)) continue;
                const bool keep = (x > 0 && m.at(x - 1, y, z)) && (x + 1 < s[0] && m.at(x + 1, y, z)) &&
                                  (y > 0 && m.at(x, y - 1, z)) && (y + 1 < s[1] && m.at(x, y + 1, z)) &&
                                  (z > 0 && m.at(x, y, z - 1)) && (z + 1 < s[2] && m.at(x, y, z + 1));
                if (!keep) out.at(x, y, z) = 0;
            }
    return out;
}

inline BrainMask dilate(BrainMask m, int steps) {
    for (int i = 0; i < steps; ++i) m = dilate(m);
    return m;
}

inline BrainMask erode(BrainMask m, int steps) {
    for (int i = 0; i < steps; ++i) m = erode(m);
    return m;
}

// Fills interior holes: flood-fills the background from the grid boundary
// (6-connected) and flips every unreached zero voxel to one.
inline BrainMask fill_holes(const BrainMask& m) {
    const IVec3 s = m.shape;
    std::vector<std::uint8_t> outside(m.data.size(), 0);
    std::vector<std::size_t> stack;
    auto push = [&](int x, int y, int z) {
        const std::size_t i = m.index(x, y, z);
        if (!m.data[i] && !outside[i]) {
            outside[i] = 1;
            stack.push_back(i);
        }
    };
    for (int x = 0; x < s[0]; ++x)
        for (int y = 0; y < s[1]; ++y)
            for (int z = 0; z < s[2]; ++z)
                if (x == 0 || y == 0 || z == 0 || x == s[0] - 1 || y == s[1] - 1 || z == s[2] - 1)
                    push(x, y, z);
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const int z = int(i % std::size_t(s[2]));
        const int y = int((i / std::size_t(s[2])) % std::size_t(s[1]));
        const int x = int(i / (std::size_t(s[2]) * std::size_t(s[1])));
        if (x > 0) push(x - 1, y, z);
        if (x + 1 < s[0]) push(x + 1, y, z);
        if (y > 0) push(x, y - 1, z);
        if (y + 1 < s[1]) push(x, y + 1, z);
        if (z > 0) push(x, y, z - 1);
        if (z + 1 < s[2]) push(x, y, z + 1);
    }
    BrainMask out = m;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (!out.data[i] && !outside[i]) out.data[i] = 1;
    return out;
}

} // namespace morph

// Union of all protocol brain labels (transient IDs are not brain).
inline BrainMask brain_union(const LabelMap& lm) {
    BrainMask m = BrainMask::zeros_like(lm);
    for (std::size_t i = 0; i < lm.data.size(); ++i) {
        const std::uint32_t id = lm.data[i];
        if (id != 0 && !is_transient_label(id)) m.data[i] = 1;
    }
    return m;
}

// Voxel-wise maximum over per-channel masks.
inline BrainMask aggregate_mask(const std::vector<BrainMask>& masks) {
    if (masks.empty()) throw std::invalid_argument("aggregate_mask: empty mask list");
    BrainMask out = masks[0];
    for (std::size_t k = 1; k < masks.size(); ++k) {
        if (masks[k].shape != out.shape)
            throw std::invalid_argument("aggregate_mask: geometry mismatch");
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::max(out.data[i], masks[k].data[i]);
    }
    return out;
}

// Sets the label map to background wherever the mask is zero.
inline LabelMap mask_labels(const LabelMap& lm, const BrainMask& m) {
    if (m.shape != lm.shape) throw std::invalid_argument("mask_labels: geometry mismatch");
    LabelMap out = lm;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (!m.data[i]) out.data[i] = 0;
    return out;
}

} // namespace babyseg

#endif // BABYSEG_MORPHOLOGY_HPP
