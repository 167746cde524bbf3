#ifndef BABYSEG_VOLUME_HPP
#define BABYSEG_VOLUME_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "babyseg/geometry.hpp"

namespace babyseg {

// Bad input data (files, label IDs, schemas). The CLI maps this to exit 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Transient label IDs live at or above this base so they can never collide
// with protocol IDs. Blobs occupy [1000, 2000), GMM non-brain labels [2000, ...).
constexpr std::uint32_t kBlobLabelBase = 1000;
constexpr std::uint32_t kNonBrainLabelBase = 2000;

inline bool is_transient_label(std::uint32_t id) { return id >= kBlobLabelBase; }

enum class Laterality { Background, Left, Right, Unilateral };

struct LabelDef {
    std::uint32_t id = 0;
    std::string name;
    Laterality laterality = Laterality::Unilateral;
    std::uint32_t partner = 0; // paired label for left/right, 0 otherwise
};

// Ordered list of the K labels a model predicts. Position in the list is the
// class index used by one-hot encodings and the network output channels.
struct LabelProtocol {
    std::string name;
    int version = 1;
    std::vector<LabelDef> labels;

    std::size_t size() const { return labels.size(); }

    bool contains(std::uint32_t id) const {
        for (const auto& l : labels)
            if (l.id == id) return true;
        return false;
    }

    const LabelDef& find(std::uint32_t id) const {
        for (const auto& l : labels)
            if (l.id == id) return l;
        throw DataError("protocol has no label ID " + std::to_string(id));
    }

    int class_index(std::uint32_t id) const {
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k].id == id) return int(k);
        return -1;
    }

    // All non-background protocol IDs. Brain-mask construction unions these.
    std::vector<std::uint32_t> brain_ids() const {
        std::vector<std::uint32_t> out;
        for (const auto& l : labels)
            if (l.laterality != Laterality::Background) out.push_back(l.id);
        return out;
    }
};

// The 22-class BabySeg protocol: background plus 10 bilateral structures and
// the unilateral brain stem. Mirrors data/babyseg_labels.json.
inline const LabelProtocol& babyseg_protocol() {
    static const LabelProtocol proto = [] {
        LabelProtocol p;
        p.name = "babyseg-22";
        p.version = 1;
        auto bg = [](std::uint32_t id, const std::string& n) {
            return LabelDef{id, n, Laterality::Background, 0};
        };
        auto uni = [](std::uint32_t id, const std::string& n) {
            return LabelDef{id, n, Laterality::Unilateral, 0};
        };
        auto pair = [&p](std::uint32_t lid, std::uint32_t rid, const std::string& n) {
            p.labels.push_back(LabelDef{lid, "left " + n, Laterality::Left, rid});
            p.labels.push_back(LabelDef{rid, "right " + n, Laterality::Right, lid});
        };
        p.labels.push_back(bg(0, "background"));
        pair(1, 2, "cerebral white matter");
        pair(3, 4, "cerebral cortex");
        pair(5, 6, "lateral ventricle");
        pair(7, 8, "cerebellum");
        pair(9, 10, "thalamus");
        pair(11, 12, "caudate");
        p.labels.push_back(uni(13, "brain stem"));
        pair(14, 15, "hippocampus");
        pair(16, 17, "amygdala");
        pair(18, 19, "ventral DC");
        pair(20, 21, "basal ganglia");
        return p;
    }();
    return proto;
}

struct GridSpec {
    IVec3 shape{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    std::string orientation = "LIA";

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (shape[a] <= 0) throw std::invalid_argument("GridSpec: shape must be positive");
            if (!(spacing[a] > 0.0)) throw std::invalid_argument("GridSpec: spacing must be positive");
        }
        if (!valid_orientation(orientation))
            throw std::invalid_argument("GridSpec: invalid orientation '" + orientation + "'");
    }

    bool operator==(const GridSpec& o) const {
        return shape == o.shape && spacing == o.spacing && orientation == o.orientation;
    }
};

// Voxel-to-world affine for a grid with the given orientation, placing the
// grid center at world_center.
inline Mat4 grid_affine(const GridSpec& grid, const Vec3& world_center = {0, 0, 0}) {
    grid.validate();
    Mat4 out = Mat4::identity();
    Vec3 center_voxel = {(grid.shape[0] - 1) / 2.0, (grid.shape[1] - 1) / 2.0, (grid.shape[2] - 1) / 2.0};
    for (int a = 0; a < 3; ++a) {
        const Vec3 dir = axis_code_direction(grid.orientation[std::size_t(a)]);
        for (int r = 0; r < 3; ++r) out.at(r, a) = dir[r] * grid.spacing[a];
    }
    for (int r = 0; r < 3; ++r) {
        double off = world_center[r];
        for (int a = 0; a < 3; ++a) off -= out.at(r, a) * center_voxel[a];
        out.at(r, 3) = off;
    }
    return out;
}

namespace detail {

template <typename T>
struct Grid3 {
    IVec3 shape{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Mat4 affine = Mat4::identity();
    std::vector<T> data;

    std::size_t voxel_count() const {
        return std::size_t(shape[0]) * std::size_t(shape[1]) * std::size_t(shape[2]);
    }

    // Flat index with axis 2 fastest: (x, y, z) -> (x * ny + y) * nz + z.
    std::size_t index(int x, int y, int z) const {
        return (std::size_t(x) * std::size_t(shape[1]) + std::size_t(y)) * std::size_t(shape[2]) +
               std::size_t(z);
    }

    T& at(int x, int y, int z) { return data[index(x, y, z)]; }
    T at(int x, int y, int z) const { return data[index(x, y, z)]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < shape[0] && y >= 0 && y < shape[1] && z >= 0 && z < shape[2];
    }

    template <typename U>
    bool same_geometry(const Grid3<U>& o, double tol = 0.0) const {
        if (shape != o.shape) return false;
        for (int i = 0; i < 16; ++i)
            if (std::abs(affine.m[std::size_t(i)] - o.affine.m[std::size_t(i)]) > tol) return false;
        return true;
    }

    Vec3 world_center() const {
        return transform_point(affine,
                               {(shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0, (shape[2] - 1) / 2.0});
    }

    void check_valid(const char* what) const {
        for (int a = 0; a < 3; ++a) {
            if (shape[a] <= 0) throw std::invalid_argument(std::string(what) + ": empty shape");
            if (!(spacing[a] > 0.0)) throw std::invalid_argument(std::string(what) + ": non-positive spacing");
        }
        if (data.size() != voxel_count())
            throw std::invalid_argument(std::string(what) + ": data size does not match shape");
        if (std::abs(det3(affine)) <= 1e-12)
            throw std::invalid_argument(std::string(what) + ": affine is not invertible");
    }
};

} // namespace detail

// 3-D scalar grid of float32 with voxel spacing and a voxel-to-world affine.
// Carrier for images, masks, and noise fields.
struct Volume : detail::Grid3<float> {
    static Volume zeros(const IVec3& shape, const Vec3& spacing = {1, 1, 1},
                        const Mat4& affine = Mat4::identity()) {
        Volume v;
        v.shape = shape;
        v.spacing = spacing;
        v.affine = affine;
        v.data.assign(v.voxel_count(), 0.0f);
        return v;
    }

    void validate() const { check_valid("Volume"); }
};

// 3-D grid of label IDs over a protocol plus transient (blob / non-brain) IDs.
struct LabelMap : detail::Grid3<std::uint32_t> {
    LabelProtocol protocol;

    static LabelMap zeros(const IVec3& shape, const Vec3& spacing = {1, 1, 1},
                          const Mat4& affine = Mat4::identity(),
                          const LabelProtocol& proto = babyseg_protocol()) {
        LabelMap lm;
        lm.shape = shape;
        lm.spacing = spacing;
        lm.affine = affine;
        lm.protocol = proto;
        lm.data.assign(lm.voxel_count(), 0u);
        return lm;
    }

    void validate() const {
        check_valid("LabelMap");
        for (std::uint32_t v : data)
            if (!is_transient_label(v) && !protocol.contains(v))
                throw DataError("LabelMap: voxel ID " + std::to_string(v) + " not in protocol");
    }

    std::map<std::uint32_t, std::size_t> label_counts() const {
        std::map<std::uint32_t, std::size_t> counts;
        for (std::uint32_t v : data) ++counts[v];
        return counts;
    }
};

// Ordered set of spatially aligned volumes sharing one label map.
using GroupBatch = std::vector<Volume>;

inline void check_group_geometry(const GroupBatch& vols, const LabelMap& lm, double tol = 1e-9) {
    for (const auto& v : vols)
        if (!v.same_geometry(lm, tol))
            throw std::invalid_argument("group batch geometry does not match label map");
}

// Total map from source label IDs to target IDs.
struct LabelMergeTable {
    std::map<std::uint32_t, std::uint32_t> map;

    std::uint32_t lookup(std::uint32_t src) const {
        auto it = map.find(src);
        if (it == map.end()) throw DataError("LabelMergeTable: unmapped label ID " + std::to_string(src));
        return it->second;
    }
};

} // namespace babyseg

#endif // BABYSEG_VOLUME_HPP
