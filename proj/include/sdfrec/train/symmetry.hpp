#pragma once

#include "sdfrec/core/checkpoint.hpp"
#include "sdfrec/core/graph.hpp"
#include "sdfrec/core/vecmath.hpp"

namespace sdfrec {

// World-to-canonical transform for the mirror prior, parameterized as
// translation plus axis-angle rotation ("sym.rot", "sym.trans"). Axis-angle
// keeps the rotation exactly in SO(3) after every optimizer update.
struct SymmetryTransform {
    // R = I + f1(|w|^2) [w]x + f2(|w|^2) [w]x^2, built from ops so gradients
    // flow into the rotation parameters.
    static ad::Value rotation(ad::Tape& t, ParamStore& store) {
        int id = store.find("sym.rot");
        ad::Value w = t.param_leaf(store.at(id).value, id);  // [1 x 3]
        ad::Value u = t.sum_all(t.square(w));                // [1 x 1]
        ad::Value f1 = t.rot_coef_a(u);
        ad::Value f2 = t.rot_coef_b(u);

        // [w]x = w0*G0 + w1*G1 + w2*G2
        static const double g0[9] = {0, 0, 0, 0, 0, -1, 0, 1, 0};
        static const double g1[9] = {0, 0, 1, 0, 0, 0, -1, 0, 0};
        static const double g2[9] = {0, -1, 0, 1, 0, 0, 0, 0, 0};
        auto basis = [&](const double* g) {
            return t.constant(Tensor(3, 3, std::vector<double>(g, g + 9)));
        };
        auto scaled = [&](int i, const double* g) {
            ad::Value wi = t.slice_cols(w, i, 1);
            return t.mul(t.broadcast_to(wi, 3, 3), basis(g));
        };
        ad::Value k = t.add(t.add(scaled(0, g0), scaled(1, g1)), scaled(2, g2));
        ad::Value k2 = t.matmul(k, k);
        ad::Value eye = t.constant(Tensor(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
        return t.add(eye, t.add(t.mul(t.broadcast_to(f1, 3, 3), k),
                                t.mul(t.broadcast_to(f2, 3, 3), k2)));
    }

    static ad::Value translation(ad::Tape& t, ParamStore& store) {
        int id = store.find("sym.trans");
        return t.param_leaf(store.at(id).value, id);  // [1 x 3]
    }

    // x' = R^T (S (R x + t) - t) with S = diag(1,-1,1); rows of `points`.
    static ad::Value mirror_points(ad::Tape& t, ParamStore& store, ad::Value points) {
        ad::Value r = rotation(t, store);
        ad::Value tr = translation(t, store);
        ad::Value s = t.constant(Tensor(3, 3, {1, 0, 0, 0, -1, 0, 0, 0, 1}));
        ad::Value xc = t.add_row_vec(t.matmul(points, r, Trans::N, Trans::T), tr);
        ad::Value xs = t.matmul(xc, s);
        return t.matmul(t.add_row_vec(xs, t.neg(tr)), r);
    }

    // n' = R^T S R n.
    static ad::Value mirror_normals(ad::Tape& t, ParamStore& store, ad::Value normals) {
        ad::Value r = rotation(t, store);
        ad::Value s = t.constant(Tensor(3, 3, {1, 0, 0, 0, -1, 0, 0, 0, 1}));
        return t.matmul(t.matmul(t.matmul(normals, r, Trans::N, Trans::T), s), r);
    }

    // Plain (non-graph) evaluation with the current parameter values.
    static Mat3 rotation_value(const ParamStore& store) {
        const Tensor& w = store.at("sym.rot").value;
        Vec3 wv{w.at(0), w.at(1), w.at(2)};
        double angle = norm(wv);
        if (angle < 1e-12) return Mat3::identity();
        return Mat3::axis_angle(wv, angle);
    }

    static Vec3 translation_value(const ParamStore& store) {
        const Tensor& t = store.at("sym.trans").value;
        return {t.at(0), t.at(1), t.at(2)};
    }

    static std::pair<Vec3, Vec3> mirror(const ParamStore& store, const Vec3& x, const Vec3& n) {
        Mat3 r = rotation_value(store);
        Vec3 tr = translation_value(store);
        Vec3 xc = r * x + tr;
        Vec3 xs{xc.x, -xc.y, xc.z};
        Vec3 xp = r.transposed() * (xs - tr);
        Vec3 nc = r * n;
        Vec3 np = r.transposed() * Vec3{nc.x, -nc.y, nc.z};
        return {xp, np};
    }

    // Writes the transform mapping world to the given canonical frame.
    static void set_from_canonical(ParamStore& store, const SE3& world_from_canonical) {
        SE3 canon_from_world = world_from_canonical.inverse();
        // axis-angle from rotation matrix via the matrix log
        const Mat3& R = canon_from_world.R;
        double tr = R(0, 0) + R(1, 1) + R(2, 2);
        double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
        double angle = std::acos(c);
        Vec3 axis{R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)};
        Tensor& w = store.at("sym.rot").value;
        if (angle < 1e-12 || norm(axis) < 1e-12) {
            w.at(0) = w.at(1) = w.at(2) = 0;
        } else {
            Vec3 aa = normalized(axis) * angle;
            w.at(0) = aa.x;
            w.at(1) = aa.y;
            w.at(2) = aa.z;
        }
        Tensor& t = store.at("sym.trans").value;
        t.at(0) = canon_from_world.t.x;
        t.at(1) = canon_from_world.t.y;
        t.at(2) = canon_from_world.t.z;
    }
};

}  // namespace sdfrec
