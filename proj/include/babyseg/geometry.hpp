#ifndef BABYSEG_GEOMETRY_HPP
#define BABYSEG_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace babyseg {

using Vec3 = std::array<double, 3>;
using IVec3 = std::array<int, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

// Row-major 4x4 homogeneous matrix. Used as voxel-to-world affine and for
// world-space spatial transforms.
struct Mat4 {
    std::array<double, 16> m{};

    double& at(int r, int c) { return m[std::size_t(r) * 4 + std::size_t(c)]; }
    double at(int r, int c) const { return m[std::size_t(r) * 4 + std::size_t(c)]; }

    static Mat4 identity() {
        Mat4 out;
        out.at(0, 0) = out.at(1, 1) = out.at(2, 2) = out.at(3, 3) = 1.0;
        return out;
    }

    static Mat4 translation(const Vec3& t) {
        Mat4 out = identity();
        out.at(0, 3) = t[0];
        out.at(1, 3) = t[1];
        out.at(2, 3) = t[2];
        return out;
    }

    static Mat4 scaling(const Vec3& s) {
        Mat4 out = identity();
        out.at(0, 0) = s[0];
        out.at(1, 1) = s[1];
        out.at(2, 2) = s[2];
        return out;
    }

    bool operator==(const Mat4& other) const { return m == other.m; }
};

inline Mat4 operator*(const Mat4& a, const Mat4& b) {
    Mat4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += a.at(r, k) * b.at(k, c);
            out.at(r, c) = acc;
        }
    return out;
}

// Applies the affine to a point (w = 1).
inline Vec3 transform_point(const Mat4& m, const Vec3& p) {
    Vec3 out;
    for (int r = 0; r < 3; ++r)
        out[r] = m.at(r, 0) * p[0] + m.at(r, 1) * p[1] + m.at(r, 2) * p[2] + m.at(r, 3);
    return out;
}

inline double det3(const Mat4& m) {
    return m.at(0, 0) * (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1)) -
           m.at(0, 1) * (m.at(1, 0) * m.at(2, 2) - m.at(1, 2) * m.at(2, 0)) +
           m.at(0, 2) * (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0));
}

// Inverse of an affine matrix (last row 0 0 0 1). Throws on a singular
// linear part; callers treat |det| <= 1e-12 as non-invertible.
inline Mat4 affine_inverse(const Mat4& m) {
    const double d = det3(m);
    if (std::abs(d) <= 1e-12) throw std::invalid_argument("affine_inverse: singular matrix");
    const double inv = 1.0 / d;
    Mat4 out;
    out.at(0, 0) = (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1)) * inv;
    out.at(0, 1) = (m.at(0, 2) * m.at(2, 1) - m.at(0, 1) * m.at(2, 2)) * inv;
    out.at(0, 2) = (m.at(0, 1) * m.at(1, 2) - m.at(0, 2) * m.at(1, 1)) * inv;
    out.at(1, 0) = (m.at(1, 2) * m.at(2, 0) - m.at(1, 0) * m.at(2, 2)) * inv;
    out.at(1, 1) = (m.at(0, 0) * m.at(2, 2) - m.at(0, 2) * m.at(2, 0)) * inv;
    out.at(1, 2) = (m.at(0, 2) * m.at(1, 0) - m.at(0, 0) * m.at(1, 2)) * inv;
    out.at(2, 0) = (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0)) * inv;
    out.at(2, 1) = (m.at(0, 1) * m.at(2, 0) - m.at(0, 0) * m.at(2, 1)) * inv;
    out.at(2, 2) = (m.at(0, 0) * m.at(1, 1) - m.at(0, 1) * m.at(1, 0)) * inv;
    for (int r = 0; r < 3; ++r)
        out.at(r, 3) = -(out.at(r, 0) * m.at(0, 3) + out.at(r, 1) * m.at(1, 3) + out.at(r, 2) * m.at(2, 3));
    out.at(3, 3) = 1.0;
    return out;
}

inline Mat4 rotation_x(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    Mat4 out = Mat4::identity();
    out.at(1, 1) = std::cos(a);
    out.at(1, 2) = -std::sin(a);
    out.at(2, 1) = std::sin(a);
    out.at(2, 2) = std::cos(a);
    return out;
}

inline Mat4 rotation_y(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    Mat4 out = Mat4::identity();
    out.at(0, 0) = std::cos(a);
    out.at(0, 2) = std::sin(a);
    out.at(2, 0) = -std::sin(a);
    out.at(2, 2) = std::cos(a);
    return out;
}

inline Mat4 rotation_z(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    Mat4 out = Mat4::identity();
    out.at(0, 0) = std::cos(a);
    out.at(0, 1) = -std::sin(a);
    out.at(1, 0) = std::sin(a);
    out.at(1, 1) = std::cos(a);
    return out;
}

// Unit upper-triangular shear. Inputs are multiplicative factors with 1 as
// the identity; the off-diagonal entries are factor - 1.
inline Mat4 shear_matrix(const Vec3& factors) {
    Mat4 out = Mat4::identity();
    out.at(0, 1) = factors[0] - 1.0;
    out.at(0, 2) = factors[1] - 1.0;
    out.at(1, 2) = factors[2] - 1.0;
    return out;
}

// Anatomical axis codes. World coordinates are RAS+: +x right, +y anterior,
// +z superior. An orientation string like "LIA" gives the world direction of
// each buffer axis.
inline Vec3 axis_code_direction(char code) {
    switch (code) {
        case 'R': return {1, 0, 0};
        case 'L': return {-1, 0, 0};
        case 'A': return {0, 1, 0};
        case 'P': return {0, -1, 0};
        case 'S': return {0, 0, 1};
        case 'I': return {0, 0, -1};
        default: throw std::invalid_argument(std::string("axis_code_direction: bad code '") + code + "'");
    }
}

inline bool valid_orientation(const std::string& codes) {
    if (codes.size() != 3) return false;
    int seen[3] = {0, 0, 0};
    for (char c : codes) {
        int axis;
        switch (c) {
            case 'R': case 'L': axis = 0; break;
            case 'A': case 'P': axis = 1; break;
            case 'S': case 'I': axis = 2; break;
            default: return false;
        }
        ++seen[axis];
    }
    return seen[0] == 1 && seen[1] == 1 && seen[2] == 1;
}

} // namespace babyseg

#endif // BABYSEG_GEOMETRY_HPP
