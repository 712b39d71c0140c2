#pragma once

#include <cmath>
#include <vector>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/vecmath.hpp"

namespace sdfrec {

// Discretized directional lighting: unit directions, per-cell solid angle,
// rgb radiance. Shared between the learned environment map and analytic
// ground-truth scenes so both shade through the same code path.
struct EnvCells {
    std::vector<Vec3> dirs;
    std::vector<double> domega;
    std::vector<Vec3> radiance;

    int count() const { return (int)dirs.size(); }
    double total_solid_angle() const {
        double s = 0;
        for (double w : domega) s += w;
        return s;
    }
};

// Cell layout shared by the environment map and the background grid:
// `az x el` bands over an elevation range, plus optionally one ambient row
// covering the remaining lower hemisphere with uniform cells.
struct EnvLayout {
    int azimuth = 16;
    int elevation = 8;
    bool ambient_row = true;  // lower-hemisphere catch-all

    int cell_count() const { return azimuth * (elevation + (ambient_row ? 1 : 0)); }

    // Upper-hemisphere bands partition elevation [0, pi/2]; solid angles sum
    // to 2*pi, the ambient row contributes the other 2*pi.
    EnvCells unit_cells() const {
        EnvCells cells;
        cells.dirs.reserve(cell_count());
        cells.domega.reserve(cell_count());
        for (int e = 0; e < elevation; ++e) {
            double th0 = (double)e / elevation * M_PI_2;
            double th1 = (double)(e + 1) / elevation * M_PI_2;
            double w = (std::sin(th1) - std::sin(th0)) * (2.0 * M_PI / azimuth);
            double thc = 0.5 * (th0 + th1);
            for (int a = 0; a < azimuth; ++a) {
                double phi = (a + 0.5) * 2.0 * M_PI / azimuth;
                cells.dirs.push_back({std::cos(thc) * std::cos(phi),
                                      std::cos(thc) * std::sin(phi), std::sin(thc)});
                cells.domega.push_back(w);
            }
        }
        if (ambient_row) {
            double thc = -M_PI_2 / 2;
            for (int a = 0; a < azimuth; ++a) {
                double phi = (a + 0.5) * 2.0 * M_PI / azimuth;
                cells.dirs.push_back({std::cos(thc) * std::cos(phi),
                                      std::cos(thc) * std::sin(phi), std::sin(thc)});
                cells.domega.push_back(2.0 * M_PI / azimuth);
            }
        }
        cells.radiance.assign(cells.dirs.size(), Vec3{0, 0, 0});
        return cells;
    }
};

// Blinn-free Phong under discrete directional lights:
//   c = a * sum_w (w.n) E_w dOmega + a_s (g+1)/(2pi) * sum_w max(r_w.d, 0)^g E_w dOmega
// Only cells with w.n > 0 contribute. `view` points from the surface toward
// the eye; r_w.d is then 1 at perfect mirror alignment.
inline Vec3 shade_phong(const Vec3& /*point*/, const Vec3& view, const Vec3& normal,
                        const Vec3& albedo, double spec_albedo, double shininess,
                        const EnvCells& env) {
    Vec3 diffuse{0, 0, 0}, specular{0, 0, 0};
    const int n = env.count();
    for (int i = 0; i < n; ++i) {
        const Vec3& w = env.dirs[i];
        double cosw = dot(w, normal);
        if (cosw <= 0) continue;
        double dw = env.domega[i];
        const Vec3& L = env.radiance[i];
        diffuse += (cosw * dw) * L;
        Vec3 r = 2.0 * cosw * normal - w;  // mirror of w about n
        double rd = dot(r, view);
        if (rd > 0) specular += (std::pow(rd, shininess) * dw) * L;
    }
    double spec_norm = spec_albedo * (shininess + 1.0) / (2.0 * M_PI);
    return Vec3{albedo.x * diffuse.x + spec_norm * specular.x,
                albedo.y * diffuse.y + spec_norm * specular.y,
                albedo.z * diffuse.z + spec_norm * specular.z};
}

}  // namespace sdfrec
