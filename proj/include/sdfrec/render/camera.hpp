#pragma once

#include <cmath>
#include <vector>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/vecmath.hpp"

namespace sdfrec {

// A ray with its overlap against the foreground cuboid. `hits` is false for
// rays that miss the box entirely; such rays render as pure background.
struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit
    double t_near = 0, t_far = 0;
    bool hits = false;
};

struct PinholeCamera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    SE3 pose;  // world-from-camera; +z forward, +x right, +y down

    void validate() const {
        if (fx <= 0 || fy <= 0) throw PreconditionError("camera needs positive focal lengths");
        Mat3 rrt = pose.R * pose.R.transposed();
        double err = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) err = std::max(err, std::fabs(rrt(i, j) - (i == j)));
        if (err > 1e-6) throw PreconditionError("camera rotation is not orthonormal");
    }

    // Continuous pixel coordinates; (cx, cy) maps to the optical axis.
    Vec3 pixel_dir(double u, double v) const {
        Vec3 d{(u - cx) / fx, (v - cy) / fy, 1.0};
        return normalized(pose.R * d);
    }

    Vec3 center() const { return pose.t; }
};

inline Ray make_ray(const Vec3& origin, const Vec3& dir, const OrientedBox& cuboid) {
    Ray r;
    r.origin = origin;
    r.dir = dir;
    double t0, t1;
    if (cuboid.intersect(origin, dir, t0, t1) && t1 > 1e-9) {
        r.t_near = std::max(t0, 1e-9);
        r.t_far = t1;
        r.hits = r.t_far > r.t_near;
    }
    return r;
}

// Rays for a list of pixel coordinates, clipped against the foreground box.
inline std::vector<Ray> camera_rays(const PinholeCamera& cam,
                                    const std::vector<std::pair<double, double>>& pixels,
                                    const OrientedBox& cuboid) {
    cam.validate();
    for (auto& [u, v] : pixels)
        if (u < 0 || v < 0 || u > cam.width || v > cam.height)
            throw PreconditionError("pixel outside image bounds");
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (auto& [u, v] : pixels) rays.push_back(make_ray(cam.center(), cam.pixel_dir(u, v), cuboid));
    return rays;
}

// Orbit pose: camera at `position` looking at `target`, `up` fixing roll.
inline SE3 look_at(const Vec3& position, const Vec3& target, const Vec3& up = {0, 0, 1}) {
    Vec3 fwd = normalized(target - position);
    Vec3 right = normalized(cross(fwd, up));
    if (norm(cross(fwd, up)) < 1e-9) right = normalized(cross(fwd, Vec3{0, 1, 0}));
    Vec3 down = cross(fwd, right);
    SE3 pose;
    for (int i = 0; i < 3; ++i) {
        pose.R(i, 0) = right[i];
        pose.R(i, 1) = down[i];
        pose.R(i, 2) = fwd[i];
    }
    pose.t = position;
    return pose;
}

}  // namespace sdfrec
