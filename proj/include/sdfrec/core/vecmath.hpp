#pragma once

#include <array>
#include <cmath>
#include <limits>

namespace sdfrec {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x; y += o.y; z += o.z;
        return *this;
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    return n > 0 ? v / n : Vec3{0, 0, 0};
}
inline Vec3 vmin(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 vmax(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}
inline Vec3 vabs(const Vec3& v) { return {std::fabs(v.x), std::fabs(v.y), std::fabs(v.z)}; }

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    static Mat3 rotation_x(double a) {
        Mat3 r;
        double c = std::cos(a), s = std::sin(a);
        r.m = {1, 0, 0, 0, c, -s, 0, s, c};
        return r;
    }
    static Mat3 rotation_y(double a) {
        Mat3 r;
        double c = std::cos(a), s = std::sin(a);
        r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
        return r;
    }
    static Mat3 rotation_z(double a) {
        Mat3 r;
        double c = std::cos(a), s = std::sin(a);
        r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
        return r;
    }
    static Mat3 axis_angle(const Vec3& axis, double angle) {
        Vec3 k = normalized(axis);
        double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
        Mat3 r;
        r.m = {t * k.x * k.x + c,       t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
               t * k.x * k.y + s * k.z, t * k.y * k.y + c,       t * k.y * k.z - s * k.x,
               t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c};
        return r;
    }
};

// Rigid transform y = R x + t.
struct SE3 {
    Mat3 R;
    Vec3 t;

    static SE3 identity() { return {}; }
    Vec3 apply(const Vec3& x) const { return R * x + t; }
    Vec3 apply_dir(const Vec3& d) const { return R * d; }
    SE3 inverse() const {
        Mat3 rt = R.transposed();
        return {rt, -(rt * t)};
    }
    SE3 operator*(const SE3& o) const { return {R * o.R, R * o.t + t}; }
};

// Box with arbitrary orientation; `frame` maps box coordinates to world.
struct OrientedBox {
    Vec3 center;
    Vec3 half_extents{1, 1, 1};
    Mat3 rotation;  // world-from-box

    Vec3 to_box(const Vec3& p) const { return rotation.transposed() * (p - center); }
    Vec3 to_world(const Vec3& p) const { return rotation * p + center; }

    bool contains(const Vec3& p, double pad = 0.0) const {
        Vec3 q = vabs(to_box(p));
        return q.x <= half_extents.x + pad && q.y <= half_extents.y + pad &&
               q.z <= half_extents.z + pad;
    }

    OrientedBox padded(double scale) const {
        OrientedBox b = *this;
        b.half_extents = half_extents * scale;
        return b;
    }

    // Slab intersection in the box frame. Returns false on a miss; on a hit
    // t0 <= t1 bound the overlap of the ray with the box.
    bool intersect(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const {
        Vec3 o = to_box(origin);
        Vec3 d = rotation.transposed() * dir;
        t0 = -std::numeric_limits<double>::infinity();
        t1 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
            double e = half_extents[i];
            if (std::fabs(d[i]) < 1e-15) {
                if (o[i] < -e || o[i] > e) return false;
                continue;
            }
            double inv = 1.0 / d[i];
            double a = (-e - o[i]) * inv, b = (e - o[i]) * inv;
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
            if (t0 > t1) return false;
        }
        return true;
    }
};

}  // namespace sdfrec
