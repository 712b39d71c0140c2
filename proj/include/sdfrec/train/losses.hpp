#pragma once

#include <array>
#include <functional>

#include "sdfrec/core/graph.hpp"
#include "sdfrec/fields/fields.hpp"
#include "sdfrec/train/config.hpp"
#include "sdfrec/train/symmetry.hpp"

namespace sdfrec {

// L1 photometric loss: mean over rays of the channel-summed absolute error.
inline ad::Value loss_color(ad::Tape& t, ad::Value rendered, const Tensor& observed) {
    if (rendered.val().rows() == 0 || observed.rows() == 0)
        throw PreconditionError("empty batch in color loss");
    if (rendered.val().rows() != observed.rows())
        throw ShapeError("color loss batch mismatch");
    ad::Value diff = t.abs(t.sub(rendered, t.constant(observed)));
    return t.scalar_mul(t.sum_all(diff), 1.0 / observed.rows());
}

// Squared error on the in-[0,1] foreground probability, mean over rays.
inline ad::Value loss_mask(ad::Tape& t, ad::Value rendered_mask, const Tensor& observed) {
    if (rendered_mask.val().rows() != observed.rows())
        throw ShapeError("mask loss batch mismatch");
    ad::Value diff = t.square(t.sub(rendered_mask, t.constant(observed)));
    return t.scalar_mul(t.sum_all(diff), 1.0 / observed.rows());
}

// Squared depth and intensity errors plus the stray-weight penalty: weights
// at sample depths more than `epsilon` from the measured return are summed.
inline ad::Value loss_lidar(ad::Tape& t, ad::Value depth, ad::Value intensity, ad::Value weights,
                            const Tensor& ts, const Tensor& obs_depth,
                            const Tensor& obs_intensity, double lambda_int, double epsilon) {
    int n = obs_depth.rows();
    if (depth.val().rows() != n || intensity.val().rows() != n) {
        throw ShapeError("lidar loss batch mismatch");
    }
    for (int i = 0; i < n; ++i)
        if (obs_depth(i, 0) <= 0) throw PreconditionError("observed depths must be positive");
    ad::Value derr = t.square(t.sub(depth, t.constant(obs_depth)));
    ad::Value ierr = t.square(t.sub(intensity, t.constant(obs_intensity)));
    ad::Value fit = t.add(derr, t.scalar_mul(ierr, lambda_int));

    Tensor penalty_mask(ts.rows(), ts.cols());
    for (int r = 0; r < ts.rows(); ++r)
        for (int c = 0; c < ts.cols(); ++c)
            penalty_mask(r, c) = std::fabs(ts(r, c) - obs_depth(r, 0)) > epsilon ? 1.0 : 0.0;
    ad::Value stray = t.sum_all(t.mul(weights, t.constant(std::move(penalty_mask))));

    return t.scalar_mul(t.add(t.sum_all(fit), stray), 1.0 / n);
}

// (|grad s| - 1)^2 averaged over the sample points. `sdf` maps a point batch
// to signed distances; its spatial gradient is taken here, so the result is
// differentiable w.r.t. the field parameters (second-order path).
template <class SdfFn>
ad::Value loss_eikonal(ad::Tape& t, SdfFn&& sdf, ad::Value pts) {
    if (pts.val().rows() < 1) throw PreconditionError("eikonal needs at least one point");
    ad::Value s = sdf(t, pts);
    ad::Value g = t.gradient(t.sum_all(s), pts);
    ad::Value nrm = t.sqrt(t.clamp_min(t.sum_rows(t.square(g)), 1e-24));
    return t.mean_all(t.square(t.scalar_add(nrm, -1.0)));
}

// Field accessors used by the symmetry loss; neural fields and analytic
// surrogates both fit this shape.
struct SymmetryFieldFns {
    std::function<ad::Value(ad::Tape&, ad::Value)> sdf;  // pts -> s [N x 1]
    // pts -> (albedo [N x 3], spec [N x 1], gamma [N x 1]); optional
    std::function<std::array<ad::Value, 3>(ad::Tape&, ad::Value, ad::Value)> materials;
};

// Mean over points of squared mismatches between the field at x and at the
// mirrored x': distance, normal (mirrored), albedo, specular albedo,
// shininess. Gradients reach both the fields and the transform parameters.
inline ad::Value loss_symmetry(ad::Tape& t, ParamStore& store, const SymmetryFieldFns& fns,
                               ad::Value pts) {
    int n = pts.val().rows();
    if (n < 1) throw PreconditionError("symmetry loss needs points");
    ad::Value xp = SymmetryTransform::mirror_points(t, store, pts);

    ad::Value s1 = fns.sdf(t, pts);
    ad::Value s2 = fns.sdf(t, xp);
    ad::Value g1 = t.gradient(t.sum_all(s1), pts);
    ad::Value g2 = t.gradient(t.sum_all(s2), xp);
    auto unit = [&](ad::Value g) {
        ad::Value inv = t.reciprocal(t.sqrt(t.clamp_min(t.sum_rows(t.square(g)), 1e-24)));
        return t.mul_col_vec(g, inv);
    };
    ad::Value n1 = unit(g1);
    ad::Value n2 = unit(g2);
    ad::Value n1m = SymmetryTransform::mirror_normals(t, store, n1);

    ad::Value total = t.add(t.sum_all(t.square(t.sub(s1, s2))),
                            t.sum_all(t.square(t.sub(n1m, n2))));
    if (fns.materials) {
        auto m1 = fns.materials(t, pts, n1);
        auto m2 = fns.materials(t, xp, n2);
        for (int k = 0; k < 3; ++k)
            total = t.add(total, t.sum_all(t.square(t.sub(m1[k], m2[k]))));
    }
    return t.scalar_mul(total, 1.0 / n);
}

struct LossBreakdown {
    double color = 0, lidar = 0, mask = 0, eikonal = 0, symmetry = 0;
    double total = 0;
    double beta = 0;  // diagnostic: current alpha sharpness
};

inline double weighted_total(const LossBreakdown& b, const TrainingConfig& cfg) {
    return b.color + cfg.lambda_lidar * b.lidar + cfg.lambda_mask * b.mask +
           cfg.lambda_eikonal * b.eikonal + cfg.lambda_sym * b.symmetry;
}

}  // namespace sdfrec
