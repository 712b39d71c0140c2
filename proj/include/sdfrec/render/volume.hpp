#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "sdfrec/core/graph.hpp"
#include "sdfrec/core/rng.hpp"
#include "sdfrec/data/image.hpp"
#include "sdfrec/fields/fields.hpp"
#include "sdfrec/render/camera.hpp"
#include "sdfrec/render/shading.hpp"

namespace sdfrec {

// ---- scalar pieces (also used by tests and the mesh path) ---------------------

// alpha = 1 / (1 + exp(beta * s)); exponent clamped at +-80 against overflow.
inline double sdf_to_alpha(double s, double beta) {
    if (beta <= 0) throw PreconditionError("sdf_to_alpha requires beta > 0");
    double e = std::clamp(beta * s, -80.0, 80.0);
    return 1.0 / (1.0 + std::exp(e));
}

struct CompositeOut {
    std::vector<double> weights;
    std::vector<double> transmittance;  // T_i before sample i
};

inline CompositeOut composite(std::span<const double> alphas) {
    CompositeOut out;
    out.weights.reserve(alphas.size());
    out.transmittance.reserve(alphas.size());
    double T = 1.0;
    for (double a : alphas) {
        if (a < 0 || a > 1) throw PreconditionError("alpha outside [0,1]");
        out.transmittance.push_back(T);
        out.weights.push_back(a * T);
        T *= 1.0 - a;
    }
    return out;
}

// ---- stratified sampling -------------------------------------------------------

// One uniform draw per equal sub-interval of [t_near, t_far].
template <class F>
std::vector<double> stratified_ts(double t_near, double t_far, int n, F&& uniform01) {
    if (n < 2) throw PreconditionError("stratified sampling needs n >= 2");
    std::vector<double> ts(n);
    double w = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) ts[i] = t_near + (i + uniform01()) * w;
    return ts;
}

struct RaySamples {
    std::vector<double> t;
    std::vector<Vec3> points;
    std::vector<double> deltas;  // |x_{i+1} - x_i|; last interval reuses the previous one
};

inline RaySamples stratified_sample(const Ray& ray, int n, Rng& rng) {
    RaySamples s;
    s.t = stratified_ts(ray.t_near, ray.t_far, n, [&] { return rng.uniform(); });
    s.points.reserve(n);
    for (double t : s.t) s.points.push_back(ray.origin + t * ray.dir);
    s.deltas.reserve(n);
    for (int i = 0; i + 1 < n; ++i) s.deltas.push_back(norm(s.points[i + 1] - s.points[i]));
    s.deltas.push_back(n >= 2 ? s.deltas.back() : 0.0);
    return s;
}

// ---- batched differentiable rendering -------------------------------------------

// Per-ray record of the compositing state plus the aggregated outputs.
struct CompositeResult {
    std::vector<double> alpha;
    std::vector<double> transmittance;
    std::vector<double> weights;
    std::vector<double> t;
    Vec3 color{};
    double depth = 0;
    double intensity = 0;
    double mask = 0;
};

// Graph-building renderer. All rays passed to the batch calls must intersect
// the cuboid; rays that miss are composed with the background outside.
class VolumeRenderer {
public:
    explicit VolumeRenderer(NeuralFields& fields) : f_(fields) {}

    struct Common {
        ad::Value points;   // [P x 3] leaf (differentiable)
        ad::Value s;        // [P x 1]
        ad::Value feat;     // [P x F]
        ad::Value normals;  // [P x 3] unit
        ad::Value alphas;   // [R x S]
        ad::Value weights;  // [R x S]
        ad::Value mask;     // [R x 1]
    };

    struct CameraBatch {
        Common c;
        ad::Value color;  // [R x 3] with background composed in
        ad::Value depth;  // [R x 1]
    };

    struct LidarBatch {
        Common c;
        ad::Value depth;      // [R x 1]
        ad::Value intensity;  // [R x 1]
    };

    // ts: [R x S], ascending within each row, inside [t_near, t_far].
    CameraBatch camera_batch(ad::Tape& t, const std::vector<Ray>& rays, const Tensor& ts) {
        CameraBatch out;
        out.c = common(t, rays, ts);
        const int R = (int)rays.size(), S = ts.cols();

        ad::Value view = t.constant(view_dirs(rays, S));
        ReflectanceBatch rb =
            f_.refl.eval(t, f_.store, out.c.points, out.c.normals, out.c.feat);
        ad::Value radiance =
            f_.cfg.radiance == RadianceModel::Phong
                ? shade_batch(t, view, out.c.normals, rb)
                : f_.mlp_radiance.eval(t, f_.store, out.c.points, view, out.c.normals, out.c.feat);

        ad::Value wcol = t.reshape(out.c.weights, R * S, 1);
        ad::Value fg = t.group_sum_rows(t.mul_col_vec(radiance, wcol), S);  // [R x 3]

        std::vector<int> cells(R);
        for (int r = 0; r < R; ++r) cells[r] = f_.bg.cell_of(rays[r].dir);
        ad::Value bgc = f_.bg.colors(t, f_.store, std::move(cells));
        ad::Value bg_scale = t.scalar_add(t.neg(out.c.mask), 1.0);  // 1 - sum w
        out.color = t.add(fg, t.mul_col_vec(bgc, bg_scale));
        out.depth = t.sum_rows(t.mul(out.c.weights, t.constant(ts)));
        return out;
    }

    LidarBatch lidar_batch(ad::Tape& t, const std::vector<Ray>& rays, const Tensor& ts) {
        LidarBatch out;
        out.c = common(t, rays, ts);
        const int R = (int)rays.size(), S = ts.cols();
        ReflectanceBatch rb =
            f_.refl.eval(t, f_.store, out.c.points, out.c.normals, out.c.feat);
        out.depth = t.sum_rows(t.mul(out.c.weights, t.constant(ts)));
        ad::Value irs = t.reshape(rb.intensity, R, S);
        out.intensity = t.sum_rows(t.mul(out.c.weights, irs));
        return out;
    }

    // Phong radiance for a batch of surface samples. Mirrors shade_phong:
    // diffuse cosine sum plus the normalized specular lobe, both masked to
    // lights in the normal's hemisphere.
    ad::Value shade_batch(ad::Tape& t, ad::Value view, ad::Value normals, ReflectanceBatch& rb) {
        ad::Value omega = t.constant(f_.env.directions());            // [C x 3]
        ad::Value edw = f_.env.weighted_radiance(t, f_.store);        // [C x 3]
        ad::Value cosw = t.matmul(normals, omega, Trans::N, Trans::T);  // [P x C]
        ad::Value cos_pos = t.clamp_min(cosw, 0.0);
        ad::Value diffuse = t.mul(rb.albedo, t.matmul(cos_pos, edw));

        ad::Value dn = t.sum_rows(t.mul(view, normals));  // [P x 1]
        ad::Value refl = t.sub(t.mul_col_vec(normals, t.scalar_mul(dn, 2.0)), view);
        ad::Value rd = t.clamp_min(t.matmul(refl, omega, Trans::N, Trans::T), 0.0);
        ad::Value lobe = t.mul(t.pow_rows(rd, rb.gamma), t.step_gt(cosw, 0.0));
        ad::Value spec = t.matmul(lobe, edw);
        ad::Value factor =
            t.scalar_mul(t.mul(rb.spec, t.scalar_add(rb.gamma, 1.0)), 1.0 / (2.0 * M_PI));
        return t.add(diffuse, t.mul_col_vec(spec, factor));
    }

    NeuralFields& fields() { return f_; }

private:
    Common common(ad::Tape& t, const std::vector<Ray>& rays, const Tensor& ts) {
        const int R = (int)rays.size(), S = ts.cols();
        if (R == 0 || ts.rows() != R) throw ShapeError("ray/sample batch mismatch");
        Tensor pts(R * S, 3);
        for (int r = 0; r < R; ++r) {
            if (!rays[r].hits) throw PreconditionError("batch ray misses the cuboid");
            for (int i = 0; i < S; ++i) {
                Vec3 p = rays[r].origin + ts(r, i) * rays[r].dir;
                pts(r * S + i, 0) = p.x;
                pts(r * S + i, 1) = p.y;
                pts(r * S + i, 2) = p.z;
            }
        }
        Common c;
        c.points = t.leaf(std::move(pts), true);
        SdfBatch sb = f_.sdf.eval(t, f_.store, c.points);
        c.s = sb.s;
        c.feat = sb.feat;
        c.normals = f_.sdf.unit_normals(t, f_.sdf.spatial_gradient(t, sb));

        ad::Value beta = f_.sdf.beta(t, f_.store);
        ad::Value bs = t.mul(c.s, t.broadcast_to(beta, R * S, 1));
        ad::Value clamped = t.clamp_min(t.clamp_max(bs, 80.0), -80.0);
        ad::Value alpha_col = t.sigmoid(t.neg(clamped));
        c.alphas = t.reshape(alpha_col, R, S);
        c.weights = t.composite_weights(c.alphas);
        c.mask = t.sum_rows(c.weights);
        return c;
    }

    Tensor view_dirs(const std::vector<Ray>& rays, int S) const {
        Tensor v((int)rays.size() * S, 3);
        for (int r = 0; r < (int)rays.size(); ++r)
            for (int i = 0; i < S; ++i) {
                v(r * S + i, 0) = -rays[r].dir.x;
                v(r * S + i, 1) = -rays[r].dir.y;
                v(r * S + i, 2) = -rays[r].dir.z;
            }
        return v;
    }

    NeuralFields& f_;
};

// ---- per-ray entry points --------------------------------------------------------

namespace detail_render {
inline CompositeResult fill_aux(const VolumeRenderer::Common& c, const Tensor& ts) {
    CompositeResult res;
    int S = ts.cols();
    res.t.assign(ts.data(), ts.data() + S);
    res.alpha.resize(S);
    res.weights.resize(S);
    res.transmittance.resize(S);
    double T = 1.0;
    for (int i = 0; i < S; ++i) {
        res.alpha[i] = c.alphas.val()(0, i);
        res.transmittance[i] = T;
        res.weights[i] = c.weights.val()(0, i);
        T *= 1.0 - res.alpha[i];
    }
    res.mask = c.mask.val()(0, 0);
    return res;
}
}  // namespace detail_render

// Color of one camera ray plus its compositing record. Rays that miss the
// cuboid return the background directly.
inline std::pair<Vec3, CompositeResult> render_camera_ray(NeuralFields& fields, const Ray& ray,
                                                          int n_samples, Rng& rng) {
    if (!ray.hits) {
        CompositeResult res;
        res.color = fields.bg.color_at(fields.store, ray.dir);
        return {res.color, res};
    }
    auto ts_vec = stratified_ts(ray.t_near, ray.t_far, n_samples, [&] { return rng.uniform(); });
    Tensor ts(1, n_samples, std::vector<double>(ts_vec.begin(), ts_vec.end()));
    ad::Tape t;
    VolumeRenderer vr(fields);
    auto batch = vr.camera_batch(t, {ray}, ts);
    CompositeResult res = detail_render::fill_aux(batch.c, ts);
    res.color = {batch.color.val()(0, 0), batch.color.val()(0, 1), batch.color.val()(0, 2)};
    res.depth = batch.depth.val()(0, 0);
    return {res.color, res};
}

inline std::pair<double, double> render_lidar_ray(NeuralFields& fields, const Ray& ray,
                                                  int n_samples, Rng& rng) {
    if (!ray.hits) return {0.0, 0.0};
    auto ts_vec = stratified_ts(ray.t_near, ray.t_far, n_samples, [&] { return rng.uniform(); });
    Tensor ts(1, n_samples, std::vector<double>(ts_vec.begin(), ts_vec.end()));
    ad::Tape t;
    VolumeRenderer vr(fields);
    auto batch = vr.lidar_batch(t, {ray}, ts);
    return {batch.depth.val()(0, 0), batch.intensity.val()(0, 0)};
}

inline double render_mask_ray(NeuralFields& fields, const Ray& ray, int n_samples, Rng& rng) {
    if (!ray.hits) return 0.0;
    auto ts_vec = stratified_ts(ray.t_near, ray.t_far, n_samples, [&] { return rng.uniform(); });
    Tensor ts(1, n_samples, std::vector<double>(ts_vec.begin(), ts_vec.end()));
    ad::Tape t;
    VolumeRenderer vr(fields);
    auto batch = vr.lidar_batch(t, {ray}, ts);
    return batch.c.mask.val()(0, 0);
}

struct RenderedViews {
    Image rgb;    // 3 channels
    Image depth;  // 1 channel
    Image mask;   // 1 channel
};

// Full-frame render, processed in pixel tiles. Per-pixel jitter streams are
// derived from (seed, pixel index), so the tile size never changes a value.
inline RenderedViews render_image(NeuralFields& fields, const PinholeCamera& cam,
                                  const OrientedBox& cuboid, int n_samples, int tile_pixels,
                                  uint64_t seed) {
    cam.validate();
    if (tile_pixels < 1) throw PreconditionError("tile size must be >= 1");
    RenderedViews out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.depth = Image(cam.width, cam.height, 1);
    out.mask = Image(cam.width, cam.height, 1);

    VolumeRenderer vr(fields);
    const long total = (long)cam.width * cam.height;
    for (long tile0 = 0; tile0 < total; tile0 += tile_pixels) {
        long tile1 = std::min(total, tile0 + tile_pixels);
        std::vector<Ray> hit_rays;
        std::vector<long> hit_px;
        for (long p = tile0; p < tile1; ++p) {
            int x = (int)(p % cam.width), y = (int)(p / cam.width);
            Ray ray = make_ray(cam.center(), cam.pixel_dir(x + 0.5, y + 0.5), cuboid);
            if (ray.hits) {
                hit_rays.push_back(ray);
                hit_px.push_back(p);
            } else {
                Vec3 bg = fields.bg.color_at(fields.store, ray.dir);
                out.rgb.px[(size_t)p * 3 + 0] = (float)bg.x;
                out.rgb.px[(size_t)p * 3 + 1] = (float)bg.y;
                out.rgb.px[(size_t)p * 3 + 2] = (float)bg.z;
            }
        }
        if (hit_rays.empty()) continue;
        Tensor ts((int)hit_rays.size(), n_samples);
        for (int r = 0; r < (int)hit_rays.size(); ++r) {
            Rng prng(hash_mix(seed ^ (uint64_t)hit_px[r]));
            auto tv = stratified_ts(hit_rays[r].t_near, hit_rays[r].t_far, n_samples,
                                    [&] { return prng.uniform(); });
            for (int i = 0; i < n_samples; ++i) ts(r, i) = tv[i];
        }
        ad::Tape t;
        auto batch = vr.camera_batch(t, hit_rays, ts);
        for (int r = 0; r < (int)hit_rays.size(); ++r) {
            long p = hit_px[r];
            out.rgb.px[(size_t)p * 3 + 0] = (float)batch.color.val()(r, 0);
            out.rgb.px[(size_t)p * 3 + 1] = (float)batch.color.val()(r, 1);
            out.rgb.px[(size_t)p * 3 + 2] = (float)batch.color.val()(r, 2);
            out.depth.px[p] = (float)batch.depth.val()(r, 0);
            out.mask.px[p] = (float)batch.c.mask.val()(r, 0);
        }
    }
    return out;
}

}  // namespace sdfrec
