#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/parallel.hpp"
#include "sdfrec/core/rng.hpp"
#include "sdfrec/core/vecmath.hpp"
#include "sdfrec/data/image.hpp"
#include "sdfrec/render/camera.hpp"
#include "sdfrec/render/shading.hpp"

namespace sdfrec {

struct Material {
    Vec3 albedo;
    double spec_albedo = 0;
    double shininess = 8;
    double intensity = 0.5;
};

// Closed-form ground-truth scene: exact SDF, materials, lighting and
// background. Serves as the verification oracle for the learned pipeline.
struct AnalyticScene {
    std::string name;
    std::function<double(const Vec3&)> sdf;  // 1-Lipschitz
    std::function<Material(const Vec3&)> material;
    EnvCells env;
    std::function<Vec3(const Vec3&)> background;
    OrientedBox cuboid;
    SE3 canonical_frame;  // world-from-canonical (mirror plane is canonical y=0)
};

// ---- distance primitives -------------------------------------------------------

namespace sdf_prim {

inline double sphere(const Vec3& p, const Vec3& c, double r) { return norm(p - c) - r; }

inline double box(const Vec3& p, const Vec3& c, const Vec3& he) {
    Vec3 q = vabs(p - c) - he;
    Vec3 qp = vmax(q, Vec3{0, 0, 0});
    double outside = norm(qp);
    double inside = std::min(0.0, std::max({q.x, q.y, q.z}));
    return outside + inside;
}

inline double rounded_box(const Vec3& p, const Vec3& c, const Vec3& he, double r) {
    return box(p, c, he) - r;
}

inline double capsule(const Vec3& p, const Vec3& a, const Vec3& b, double r) {
    Vec3 pa = p - a, ba = b - a;
    double h = std::clamp(dot(pa, ba) / dot(ba, ba), 0.0, 1.0);
    return norm(pa - ba * h) - r;
}

}  // namespace sdf_prim

// ---- sphere tracing --------------------------------------------------------------

struct TraceHit {
    bool hit = false;
    bool grazing = false;  // step budget exhausted with |sdf| already small
    Vec3 point;
    Vec3 normal;
    double depth = 0;
};

inline TraceHit sphere_trace(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir,
                             double max_depth = 50.0) {
    if (std::fabs(norm(dir) - 1.0) > 1e-9)
        throw PreconditionError("sphere_trace requires a unit direction");
    TraceHit out;
    double t = 0.0;
    double d = 0.0;
    for (int step = 0; step < 256; ++step) {
        Vec3 p = origin + t * dir;
        d = scene.sdf(p);
        if (std::fabs(d) < 1e-6) {
            out.hit = true;
            out.depth = t;
            out.point = p;
            break;
        }
        t += d;
        if (t > max_depth || t < 0) return out;
    }
    if (!out.hit) {
        if (std::fabs(d) < 1e-3) {  // grazing: classify as a hit at the current point
            out.hit = true;
            out.grazing = true;
            out.depth = t;
            out.point = origin + t * dir;
        } else {
            return out;
        }
    }
    const double h = 1e-5;
    Vec3 g{scene.sdf(out.point + Vec3{h, 0, 0}) - scene.sdf(out.point - Vec3{h, 0, 0}),
           scene.sdf(out.point + Vec3{0, h, 0}) - scene.sdf(out.point - Vec3{0, h, 0}),
           scene.sdf(out.point + Vec3{0, 0, h}) - scene.sdf(out.point - Vec3{0, 0, h})};
    out.normal = normalized(g);
    return out;
}

// ---- captures ---------------------------------------------------------------------

struct CameraCapture {
    Image rgb;   // 3 channels
    Image mask;  // 1 channel, exact
};

inline CameraCapture capture_camera(const AnalyticScene& scene, const PinholeCamera& cam) {
    cam.validate();
    CameraCapture cap;
    cap.rgb = Image(cam.width, cam.height, 3);
    cap.mask = Image(cam.width, cam.height, 1);
    parallel_for(cam.height, 8, [&](long y0, long y1) {
        for (long y = y0; y < y1; ++y)
            for (int x = 0; x < cam.width; ++x) {
                Vec3 dir = cam.pixel_dir(x + 0.5, y + 0.5);
                TraceHit hit = sphere_trace(scene, cam.center(), dir);
                Vec3 c;
                if (hit.hit && scene.cuboid.contains(hit.point, 1e-6)) {
                    Material m = scene.material(hit.point);
                    c = shade_phong(hit.point, -dir, hit.normal, m.albedo, m.spec_albedo,
                                    m.shininess, scene.env);
                    cap.mask.at(x, (int)y) = 1.0f;
                } else {
                    c = scene.background(dir);
                }
                cap.rgb.at(x, (int)y, 0) = (float)c.x;
                cap.rgb.at(x, (int)y, 1) = (float)c.y;
                cap.rgb.at(x, (int)y, 2) = (float)c.z;
            }
    });
    return cap;
}

// Returned rays only; missing returns are dropped. Directions are stored in
// the sensor frame, `pose` maps sensor to world.
struct LidarSweep {
    SE3 pose;
    std::vector<Vec3> dirs;  // sensor frame, unit
    std::vector<double> depth;
    std::vector<double> intensity;

    int count() const { return (int)dirs.size(); }
};

inline LidarSweep capture_lidar(const AnalyticScene& scene, const SE3& pose,
                                const std::vector<Vec3>& pattern) {
    if (pattern.empty()) throw PreconditionError("empty lidar pattern");
    LidarSweep sweep;
    sweep.pose = pose;
    for (const Vec3& d : pattern) {
        Vec3 wd = pose.apply_dir(d);
        TraceHit hit = sphere_trace(scene, pose.t, wd);
        if (!hit.hit || !scene.cuboid.contains(hit.point, 1e-6)) continue;
        sweep.dirs.push_back(d);
        sweep.depth.push_back(hit.depth);
        sweep.intensity.push_back(scene.material(hit.point).intensity);
    }
    return sweep;
}

// Planar grid of directions toward `fwd`, covering `half_angle` radians.
inline std::vector<Vec3> lidar_grid_pattern(int nu, int nv, double half_angle) {
    std::vector<Vec3> dirs;
    dirs.reserve((size_t)nu * nv);
    double s = std::tan(half_angle);
    for (int v = 0; v < nv; ++v)
        for (int u = 0; u < nu; ++u) {
            double uu = nu == 1 ? 0.0 : (-s + 2.0 * s * u / (nu - 1));
            double vv = nv == 1 ? 0.0 : (-s + 2.0 * s * v / (nv - 1));
            dirs.push_back(normalized(Vec3{uu, vv, 1.0}));
        }
    return dirs;
}

// ---- scene library ---------------------------------------------------------------

namespace detail_scene {

inline EnvCells sun_sky_env(const Vec3& sun_dir, double ambient, double sun_strength,
                            double sun_power) {
    EnvLayout layout;  // matches the learned map's default layout
    EnvCells cells = layout.unit_cells();
    Vec3 sun = normalized(sun_dir);
    for (int i = 0; i < cells.count(); ++i) {
        double lobe = std::pow(std::max(0.0, dot(cells.dirs[i], sun)), sun_power);
        double v = ambient + sun_strength * lobe;
        // slightly warm sun, cool ambient
        cells.radiance[i] = {v * 1.03, v, v * 0.94};
    }
    return cells;
}

inline Vec3 gradient_background(const Vec3& d) {
    double t = 0.5 * (d.z + 1.0);
    Vec3 lo{0.13, 0.14, 0.18}, hi{0.34, 0.42, 0.55};
    return lo + t * (hi - lo);
}

}  // namespace detail_scene

// Known scene names: sphere | glossybox | vehiclelike.
inline AnalyticScene make_scene(const std::string& name) {
    AnalyticScene s;
    s.name = name;
    s.background = detail_scene::gradient_background;
    s.canonical_frame = SE3::identity();

    if (name == "sphere") {
        s.sdf = [](const Vec3& p) { return sdf_prim::sphere(p, {0, 0, 0}, 0.5); };
        s.material = [](const Vec3&) {
            return Material{{0.55, 0.45, 0.40}, 0.0, 8.0, 0.7};
        };
        s.env = detail_scene::sun_sky_env({0.35, 0.25, 0.9}, 0.22, 1.1, 6.0);
        s.cuboid.center = {0, 0, 0};
        s.cuboid.half_extents = {0.6, 0.6, 0.6};
    } else if (name == "glossybox") {
        s.sdf = [](const Vec3& p) {
            return sdf_prim::rounded_box(p, {0, 0, 0}, {0.40, 0.26, 0.18}, 0.05);
        };
        s.material = [](const Vec3&) {
            return Material{{0.30, 0.09, 0.07}, 0.8, 64.0, 0.5};
        };
        s.env = detail_scene::sun_sky_env({-0.3, 0.45, 0.84}, 0.18, 1.1, 10.0);
        s.cuboid.center = {0, 0, 0};
        s.cuboid.half_extents = {0.55, 0.42, 0.33};
    } else if (name == "vehiclelike") {
        // Mirror-symmetric union about canonical y = 0; the canonical frame is
        // rotated and shifted in world so the symmetry transform is exercised.
        SE3 world_from_canon;
        world_from_canon.R = Mat3::rotation_z(20.0 * M_PI / 180.0);
        world_from_canon.t = {0.08, -0.05, 0.0};
        s.canonical_frame = world_from_canon;
        SE3 canon_from_world = world_from_canon.inverse();

        auto canon_sdf = [](const Vec3& q) {
            double body = sdf_prim::rounded_box(q, {0, 0, 0.20}, {0.48, 0.20, 0.10}, 0.04);
            double cabin = sdf_prim::rounded_box(q, {-0.06, 0, 0.38}, {0.22, 0.15, 0.08}, 0.04);
            double wheels = std::min(
                std::min(sdf_prim::capsule(q, {0.30, -0.21, 0.10}, {0.30, 0.21, 0.10}, 0.09),
                         sdf_prim::capsule(q, {-0.30, -0.21, 0.10}, {-0.30, 0.21, 0.10}, 0.09)),
                1e9);
            return std::min({body, cabin, wheels});
        };
        s.sdf = [canon_from_world, canon_sdf](const Vec3& p) {
            return canon_sdf(canon_from_world.apply(p));
        };
        s.material = [canon_from_world](const Vec3& p) {
            Vec3 q = canon_from_world.apply(p);
            double wheels =
                std::min(sdf_prim::capsule(q, {0.30, -0.21, 0.10}, {0.30, 0.21, 0.10}, 0.09),
                         sdf_prim::capsule(q, {-0.30, -0.21, 0.10}, {-0.30, 0.21, 0.10}, 0.09));
            if (wheels < 0.02) return Material{{0.06, 0.06, 0.06}, 0.1, 8.0, 0.2};
            if (q.z > 0.30) return Material{{0.55, 0.57, 0.60}, 0.4, 48.0, 0.55};
            return Material{{0.16, 0.28, 0.55}, 0.5, 32.0, 0.6};
        };
        s.env = detail_scene::sun_sky_env({0.45, -0.2, 0.87}, 0.20, 0.9, 7.0);
        s.cuboid.center = world_from_canon.apply({0, 0, 0.24});
        s.cuboid.half_extents = {0.62, 0.34, 0.30};
        s.cuboid.rotation = world_from_canon.R;
    } else {
        throw UsageError("unknown scene '" + name + "'; choices: sphere, glossybox, vehiclelike");
    }
    return s;
}

// Uniformly samples points on the zero set by tracing rays from outside.
inline std::vector<Vec3> surface_points(const AnalyticScene& scene, int count, uint64_t seed) {
    std::vector<Vec3> pts;
    Rng rng(seed);
    double far = norm(scene.cuboid.half_extents) * 3 + norm(scene.cuboid.center);
    while ((int)pts.size() < count) {
        Vec3 dir = normalized({rng.normal(), rng.normal(), rng.normal()});
        Vec3 origin = scene.cuboid.center + dir * far;
        Vec3 toward = normalized(scene.cuboid.center +
                                 Vec3{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                      rng.uniform(-0.2, 0.2)} -
                                 origin);
        TraceHit hit = sphere_trace(scene, origin, toward);
        if (hit.hit && !hit.grazing) pts.push_back(hit.point);
    }
    return pts;
}

}  // namespace sdfrec
