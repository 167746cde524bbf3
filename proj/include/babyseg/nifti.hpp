#ifndef BABYSEG_NIFTI_HPP
#define BABYSEG_NIFTI_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <variant>
#include <vector>

#include <zlib.h>

#include "babyseg/volume.hpp"

namespace babyseg {

// NIfTI-1 single-file header, 348 bytes. Only the fields this library needs
// are interpreted; the rest ride along zeroed.
struct NiftiHeader {
    std::int32_t sizeof_hdr = 348;
    char data_type[10] = {};
    char db_name[18] = {};
    std::int32_t extents = 0;
    std::int16_t session_error = 0;
    char regular = 'r';
    char dim_info = 0;
    std::int16_t dim[8] = {};
    float intent_p1 = 0, intent_p2 = 0, intent_p3 = 0;
    std::int16_t intent_code = 0;
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    std::int16_t slice_start = 0;
    float pixdim[8] = {};
    float vox_offset = 352;
    float scl_slope = 0;
    float scl_inter = 0;
    std::int16_t slice_end = 0;
    char slice_code = 0;
    char xyzt_units = 0;
    float cal_max = 0, cal_min = 0;
    float slice_duration = 0, toffset = 0;
    std::int32_t glmax = 0, glmin = 0;
    char descrip[80] = {};
    char aux_file[24] = {};
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float quatern_b = 0, quatern_c = 0, quatern_d = 0;
    float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
    float srow_x[4] = {};
    float srow_y[4] = {};
    float srow_z[4] = {};
    char intent_name[16] = {};
    char magic[4] = {};
};
static_assert(sizeof(NiftiHeader) == 348, "NiftiHeader must pack to 348 bytes");

namespace nifti_detail {

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;

struct GzFile {
    gzFile f = nullptr;
    explicit GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
    ~GzFile() {
        if (f) gzclose(f);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;
};

inline void swap_bytes(void* p, std::size_t size) {
    auto* b = static_cast<unsigned char*>(p);
    for (std::size_t i = 0; i < size / 2; ++i) std::swap(b[i], b[size - 1 - i]);
}

inline void swap_header(NiftiHeader& h) {
    swap_bytes(&h.sizeof_hdr, 4);
    swap_bytes(&h.extents, 4);
    swap_bytes(&h.session_error, 2);
    for (auto& d : h.dim) swap_bytes(&d, 2);
    swap_bytes(&h.intent_p1, 4);
    swap_bytes(&h.intent_p2, 4);
    swap_bytes(&h.intent_p3, 4);
    swap_bytes(&h.intent_code, 2);
    swap_bytes(&h.datatype, 2);
    swap_bytes(&h.bitpix, 2);
    swap_bytes(&h.slice_start, 2);
    for (auto& d : h.pixdim) swap_bytes(&d, 4);
    swap_bytes(&h.vox_offset, 4);
    swap_bytes(&h.scl_slope, 4);
    swap_bytes(&h.scl_inter, 4);
    swap_bytes(&h.slice_end, 2);
    swap_bytes(&h.cal_max, 4);
    swap_bytes(&h.cal_min, 4);
    swap_bytes(&h.slice_duration, 4);
    swap_bytes(&h.toffset, 4);
    swap_bytes(&h.glmax, 4);
    swap_bytes(&h.glmin, 4);
    swap_bytes(&h.qform_code, 2);
    swap_bytes(&h.sform_code, 2);
    swap_bytes(&h.quatern_b, 4);
    swap_bytes(&h.quatern_c, 4);
    swap_bytes(&h.quatern_d, 4);
    swap_bytes(&h.qoffset_x, 4);
    swap_bytes(&h.qoffset_y, 4);
    swap_bytes(&h.qoffset_z, 4);
    for (auto& v : h.srow_x) swap_bytes(&v, 4);
    for (auto& v : h.srow_y) swap_bytes(&v, 4);
    for (auto& v : h.srow_z) swap_bytes(&v, 4);
}

inline Mat4 affine_from_header(const NiftiHeader& h) {
    if (h.sform_code > 0) {
        Mat4 m = Mat4::identity();
        for (int c = 0; c < 4; ++c) {
            m.at(0, c) = h.srow_x[c];
            m.at(1, c) = h.srow_y[c];
            m.at(2, c) = h.srow_z[c];
        }
        return m;
    }
    if (h.qform_code > 0) {
        const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        const double a2 = std::max(0.0, 1.0 - b * b - c * c - d * d);
        const double a = std::sqrt(a2);
        const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
        const double sx = h.pixdim[1], sy = h.pixdim[2], sz = qfac * h.pixdim[3];
        Mat4 m = Mat4::identity();
        m.at(0, 0) = (a * a + b * b - c * c - d * d) * sx;
        m.at(0, 1) = (2 * b * c - 2 * a * d) * sy;
        m.at(0, 2) = (2 * b * d + 2 * a * c) * sz;
        m.at(1, 0) = (2 * b * c + 2 * a * d) * sx;
        m.at(1, 1) = (a * a + c * c - b * b - d * d) * sy;
        m.at(1, 2) = (2 * c * d - 2 * a * b) * sz;
        m.at(2, 0) = (2 * b * d - 2 * a * c) * sx;
        m.at(2, 1) = (2 * c * d + 2 * a * b) * sy;
        m.at(2, 2) = (a * a + d * d - b * b - c * c) * sz;
        m.at(0, 3) = h.qoffset_x;
        m.at(1, 3) = h.qoffset_y;
        m.at(2, 3) = h.qoffset_z;
        return m;
    }
    Mat4 m = Mat4::identity();
    m.at(0, 0) = h.pixdim[1];
    m.at(1, 1) = h.pixdim[2];
    m.at(2, 2) = h.pixdim[3];
    return m;
}

struct RawNifti {
    NiftiHeader header;
    IVec3 shape{};
    Vec3 spacing{};
    Mat4 affine;
    std::vector<float> values; // scaled, in NIfTI linear order (x fastest)
    bool integral_type = false;
};

inline RawNifti read_raw(const std::string& path) {
    GzFile gz(path, "rb");
    if (!gz.f) throw DataError("cannot open '" + path + "'");
    NiftiHeader h;
    if (gzread(gz.f, &h, sizeof(h)) != int(sizeof(h)))
        throw DataError("'" + path + "': truncated NIfTI header");
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348) throw DataError("'" + path + "': not a NIfTI-1 file");
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0)
        throw DataError("'" + path + "': bad magic (expected single-file 'n+1')");
    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw DataError("'" + path + "': bad dimension count");
    for (int d = 4; d <= ndim; ++d)
        if (h.dim[d] > 1)
            throw DataError("'" + path + "': unsupported " + std::to_string(ndim) +
                            "-D image (only 3-D volumes are supported)");

    RawNifti out;
    out.header = h;
    out.shape = {int(h.dim[1]), int(ndim >= 2 ? h.dim[2] : 1), int(ndim >= 3 ? h.dim[3] : 1)};
    for (int a = 0; a < 3; ++a) {
        if (out.shape[a] <= 0) throw DataError("'" + path + "': non-positive extent");
        out.spacing[a] = h.pixdim[a + 1] > 0.0f ? double(h.pixdim[a + 1]) : 1.0;
    }
    out.affine = affine_from_header(h);

    const std::size_t count =
        std::size_t(out.shape[0]) * std::size_t(out.shape[1]) * std::size_t(out.shape[2]);
    std::size_t elem = 0;
    switch (h.datatype) {
        case DT_UINT8: elem = 1; break;
        case DT_INT16: elem = 2; break;
        case DT_INT32: elem = 4; break;
        case DT_FLOAT32: elem = 4; break;
        default:
            throw DataError("'" + path + "': unsupported datatype code " + std::to_string(h.datatype));
    }
    out.integral_type = h.datatype != DT_FLOAT32;

    // skip any extension bytes up to vox_offset
    const long offset = long(h.vox_offset);
    if (offset < 348) throw DataError("'" + path + "': bad vox_offset");
    std::vector<char> skip(std::size_t(offset) - 348);
    if (!skip.empty() && gzread(gz.f, skip.data(), unsigned(skip.size())) != int(skip.size()))
        throw DataError("'" + path + "': truncated before voxel data");

    std::vector<unsigned char> raw(count * elem);
    const std::size_t chunk = 1 << 24;
    std::size_t got = 0;
    while (got < raw.size()) {
        const unsigned want = unsigned(std::min(chunk, raw.size() - got));
        const int n = gzread(gz.f, raw.data() + got, want);
        if (n <= 0) throw DataError("'" + path + "': truncated voxel data");
        got += std::size_t(n);
    }

    const double slope = h.scl_slope != 0.0f ? double(h.scl_slope) : 1.0;
    const double inter = h.scl_slope != 0.0f ? double(h.scl_inter) : 0.0;
    out.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0.0;
        switch (h.datatype) {
            case DT_UINT8: v = raw[i]; break;
            case DT_INT16: {
                std::int16_t x;
                std::memcpy(&x, raw.data() + i * 2, 2);
                if (swapped) swap_bytes(&x, 2);
                v = x;
                break;
            }
            case DT_INT32: {
                std::int32_t x;
                std::memcpy(&x, raw.data() + i * 4, 4);
                if (swapped) swap_bytes(&x, 4);
                v = x;
                break;
            }
            case DT_FLOAT32: {
                float x;
                std::memcpy(&x, raw.data() + i * 4, 4);
                if (swapped) swap_bytes(&x, 4);
                v = x;
                break;
            }
        }
        // identity scaling stays bitwise for float32 round trips
        out.values[i] = (slope == 1.0 && inter == 0.0) ? float(v) : float(v * slope + inter);
    }
    return out;
}

// NIfTI stores x fastest; Volume stores z fastest.
template <typename T, typename Fetch>
inline void fill_grid(detail::Grid3<T>& g, Fetch&& fetch) {
    std::size_t src = 0;
    for (int z = 0; z < g.shape[2]; ++z)
        for (int y = 0; y < g.shape[1]; ++y)
            for (int x = 0; x < g.shape[0]; ++x, ++src)
                g.at(x, y, z) = fetch(src);
}

inline NiftiHeader make_header(const IVec3& shape, const Vec3& spacing, const Mat4& affine,
                               std::int16_t datatype, std::int16_t bitpix) {
    NiftiHeader h;
    h.dim[0] = 3;
    h.dim[1] = std::int16_t(shape[0]);
    h.dim[2] = std::int16_t(shape[1]);
    h.dim[3] = std::int16_t(shape[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = float(spacing[a]);
    h.vox_offset = 352;
    h.scl_slope = 1;
    h.scl_inter = 0;
    h.sform_code = 1;
    h.qform_code = 0;
    h.xyzt_units = 2; // millimetres
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = float(affine.at(0, c));
        h.srow_y[c] = float(affine.at(1, c));
        h.srow_z[c] = float(affine.at(2, c));
    }
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

inline void write_raw(const std::string& path, const NiftiHeader& h, const void* data,
                      std::size_t bytes) {
    const bool compress = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
    GzFile gz(path, compress ? "wb6" : "wbT");
    if (!gz.f) throw DataError("cannot write '" + path + "'");
    const char pad[4] = {0, 0, 0, 0};
    if (gzwrite(gz.f, &h, sizeof(h)) != int(sizeof(h)) || gzwrite(gz.f, pad, 4) != 4)
        throw DataError("'" + path + "': header write failed");
    std::size_t put = 0;
    const std::size_t chunk = 1 << 24;
    const auto* p = static_cast<const unsigned char*>(data);
    while (put < bytes) {
        const unsigned want = unsigned(std::min(chunk, bytes - put));
        if (gzwrite(gz.f, p + put, want) != int(want))
            throw DataError("'" + path + "': data write failed");
        put += want;
    }
}

} // namespace nifti_detail

inline Volume read_volume(const std::string& path) {
    const auto raw = nifti_detail::read_raw(path);
    Volume v;
    v.shape = raw.shape;
    v.spacing = raw.spacing;
    v.affine = raw.affine;
    v.data.resize(v.voxel_count());
    nifti_detail::fill_grid(v, [&](std::size_t i) { return raw.values[i]; });
    v.validate();
    return v;
}

inline LabelMap read_labelmap(const std::string& path,
                              const LabelProtocol& protocol = babyseg_protocol()) {
    const auto raw = nifti_detail::read_raw(path);
    LabelMap lm;
    lm.shape = raw.shape;
    lm.spacing = raw.spacing;
    lm.affine = raw.affine;
    lm.protocol = protocol;
    lm.data.resize(lm.voxel_count());
    nifti_detail::fill_grid(lm, [&](std::size_t i) {
        const float v = raw.values[i];
        if (v < 0.0f || std::abs(v - std::round(v)) > 1e-3f)
            throw DataError("'" + path + "': voxel value " + std::to_string(v) +
                            " is not a label ID");
        return std::uint32_t(std::lround(v));
    });
    lm.check_valid("LabelMap");
    return lm;
}

// Loads by datatype: integer files read as label maps, float files as images.
inline std::variant<Volume, LabelMap> read_image(const std::string& path) {
    const auto raw = nifti_detail::read_raw(path);
    if (raw.integral_type) return read_labelmap(path);
    return read_volume(path);
}

inline void write_volume(const Volume& vol, const std::string& path) {
    vol.validate();
    const auto h = nifti_detail::make_header(vol.shape, vol.spacing, vol.affine,
                                             nifti_detail::DT_FLOAT32, 32);
    std::vector<float> out(vol.voxel_count());
    std::size_t dst = 0;
    for (int z = 0; z < vol.shape[2]; ++z)
        for (int y = 0; y < vol.shape[1]; ++y)
            for (int x = 0; x < vol.shape[0]; ++x, ++dst) out[dst] = vol.at(x, y, z);
    nifti_detail::write_raw(path, h, out.data(), out.size() * 4);
}

inline void write_volume(const LabelMap& lm, const std::string& path) {
    lm.check_valid("LabelMap");
    std::uint32_t max_id = 0;
    for (auto v : lm.data) max_id = std::max(max_id, v);
    if (max_id <= 255) {
        const auto h =
            nifti_detail::make_header(lm.shape, lm.spacing, lm.affine, nifti_detail::DT_UINT8, 8);
        std::vector<std::uint8_t> out(lm.voxel_count());
        std::size_t dst = 0;
        for (int z = 0; z < lm.shape[2]; ++z)
            for (int y = 0; y < lm.shape[1]; ++y)
                for (int x = 0; x < lm.shape[0]; ++x, ++dst) out[dst] = std::uint8_t(lm.at(x, y, z));
        nifti_detail::write_raw(path, h, out.data(), out.size());
    } else if (max_id <= 32767) {
        const auto h =
            nifti_detail::make_header(lm.shape, lm.spacing, lm.affine, nifti_detail::DT_INT16, 16);
        std::vector<std::int16_t> out(lm.voxel_count());
        std::size_t dst = 0;
        for (int z = 0; z < lm.shape[2]; ++z)
            for (int y = 0; y < lm.shape[1]; ++y)
                for (int x = 0; x < lm.shape[0]; ++x, ++dst) out[dst] = std::int16_t(lm.at(x, y, z));
        nifti_detail::write_raw(path, h, out.data(), out.size() * 2);
    } else {
        const auto h =
            nifti_detail::make_header(lm.shape, lm.spacing, lm.affine, nifti_detail::DT_INT32, 32);
        std::vector<std::int32_t> out(lm.voxel_count());
        std::size_t dst = 0;
        for (int z = 0; z < lm.shape[2]; ++z)
            for (int y = 0; y < lm.shape[1]; ++y)
                for (int x = 0; x < lm.shape[0]; ++x, ++dst) out[dst] = std::int32_t(lm.at(x, y, z));
        nifti_detail::write_raw(path, h, out.data(), out.size() * 4);
    }
}

} // namespace babyseg

#endif // BABYSEG_NIFTI_HPP
