#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sdfrec/data/dataset.hpp"
#include "sdfrec/render/volume.hpp"
#include "sdfrec/train/adam.hpp"
#include "sdfrec/train/config.hpp"
#include "sdfrec/train/losses.hpp"

namespace sdfrec {

class TrainAbort : public Error {
public:
    TrainAbort(int iteration, const LossBreakdown& b)
        : Error("train_abort",
                "non-finite loss at iteration " + std::to_string(iteration) +
                    " (color=" + std::to_string(b.color) + " lidar=" + std::to_string(b.lidar) +
                    " mask=" + std::to_string(b.mask) + " eikonal=" + std::to_string(b.eikonal) +
                    " symmetry=" + std::to_string(b.symmetry) + ")"),
          iteration(iteration),
          breakdown(b) {}
    int iteration;
    LossBreakdown breakdown;
};

struct TrainHistoryRow {
    int iteration = 0;
    LossBreakdown losses;
};

struct TrainResult {
    std::vector<TrainHistoryRow> history;
};

inline void write_history_csv(const std::string& path, const std::vector<TrainHistoryRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write loss history: " + path);
    f << "iteration,loss_color,loss_lidar,loss_mask,loss_eikonal,loss_symmetry,total,beta\n";
    f.precision(10);
    for (const auto& r : rows)
        f << r.iteration << ',' << r.losses.color << ',' << r.losses.lidar << ',' << r.losses.mask
          << ',' << r.losses.eikonal << ',' << r.losses.symmetry << ',' << r.losses.total << ','
          << r.losses.beta << "\n";
}

inline SymmetryFieldFns neural_symmetry_fns(NeuralFields& f) {
    SymmetryFieldFns fns;
    fns.sdf = [&f](ad::Tape& t, ad::Value pts) { return f.sdf.eval(t, f.store, pts).s; };
    fns.materials = [&f](ad::Tape& t, ad::Value pts, ad::Value n) {
        SdfBatch b = f.sdf.eval(t, f.store, pts);
        ReflectanceBatch rb = f.refl.eval(t, f.store, pts, n, b.feat);
        return std::array<ad::Value, 3>{rb.albedo, rb.spec, rb.gamma};
    };
    return fns;
}

// Joint optimization of the fields, lighting, background and symmetry
// transform over random ray batches. One step: sample rays, build per-chunk
// graphs, accumulate gradients in a fixed order, then a single Adam update.
class Trainer {
public:
    Trainer(NeuralFields& fields, const SceneDataset& dataset, TrainingConfig cfg)
        : f_(fields), ds_(dataset), cfg_(cfg), rng_(cfg.seed), renderer_(fields) {
        cfg_.validate();
        train_frames_ = ds_.frame_indices("train");
        if (train_frames_.empty()) throw PreconditionError("dataset has no training frames");
        for (int si : ds_.sweep_indices("train")) {
            const LidarSweep& sw = ds_.sweeps[si];
            for (int k = 0; k < sw.count(); ++k) {
                lidar_refs_.push_back({si, k});
                lidar_points_.push_back(sw.pose.apply(sw.dirs[k] * sw.depth[k]));
            }
        }
        padded_ = ds_.cuboid.padded(1.2);
        // Seed the mirror transform from the dataset's canonical frame, but
        // only when untouched so resumed or externally-set transforms survive.
        const Tensor& w = f_.store.at("sym.rot").value;
        const Tensor& tr = f_.store.at("sym.trans").value;
        bool untouched = true;
        for (int e = 0; e < 3; ++e)
            untouched = untouched && w.at(e) == 0.0 && tr.at(e) == 0.0;
        if (untouched) SymmetryTransform::set_from_canonical(f_.store, ds_.canonical_frame);
    }

    TrainResult run(const std::function<void(int, const LossBreakdown&)>& callback = {}) {
        TrainResult res;
        for (int it = 1; it <= cfg_.iterations; ++it) {
            LossBreakdown b = step();
            if (!std::isfinite(b.total)) throw TrainAbort(it, b);
            if (it == 1 || it % cfg_.log_interval == 0 || it == cfg_.iterations) {
                res.history.push_back({it, b});
                if (callback) callback(it, b);
            }
        }
        return res;
    }

    // One optimization step; also usable with learning_rate = 0 to probe losses.
    LossBreakdown step() {
        f_.store.zero_grads();
        LossBreakdown b;
        b.beta = f_.sdf.beta_value(f_.store);

        sample_camera_rays();
        camera_pass(b);
        if (cfg_.lambda_lidar > 0 && !lidar_refs_.empty()) lidar_pass(b);
        if (cfg_.lambda_eikonal > 0 || cfg_.lambda_sym > 0) {
            Tensor pts = sample_eikonal_points();
            if (cfg_.lambda_eikonal > 0) eikonal_pass(b, pts);
            if (cfg_.lambda_sym > 0) symmetry_pass(b, pts);
        }
        b.total = weighted_total(b, cfg_);

        if (cfg_.learning_rate > 0 && std::isfinite(b.total)) {
            AdamConfig ac;
            ac.lr = cfg_.learning_rate;
            adam_step(f_.store, ac, ++adam_steps_);
        }
        return b;
    }

    const TrainingConfig& config() const { return cfg_; }

private:
    struct CamRay {
        Ray ray;
        Vec3 observed;
        double mask_target = 0;
        std::vector<double> ts;  // empty when the ray misses the cuboid
    };

    void sample_camera_rays() {
        cam_rays_.clear();
        for (int r = 0; r < cfg_.camera_rays; ++r) {
            const Frame& fr =
                ds_.frames[train_frames_[rng_.uniform_index(train_frames_.size())]];
            int x = (int)rng_.uniform_index(fr.cam.width);
            int y = (int)rng_.uniform_index(fr.cam.height);
            CamRay cr;
            cr.ray = make_ray(fr.cam.center(), fr.cam.pixel_dir(x + 0.5, y + 0.5), ds_.cuboid);
            cr.observed = {fr.rgb.at(x, y, 0), fr.rgb.at(x, y, 1), fr.rgb.at(x, y, 2)};
            cr.mask_target = fr.mask.at(x, y);
            if (cr.ray.hits)
                cr.ts = stratified_ts(cr.ray.t_near, cr.ray.t_far, cfg_.samples_per_ray,
                                      [&] { return rng_.uniform(); });
            cam_rays_.push_back(std::move(cr));
        }
    }

    void camera_pass(LossBreakdown& b) {
        const int total_rays = (int)cam_rays_.size();
        const double inv_n = 1.0 / total_rays;

        std::vector<int> hit_idx, miss_idx;
        for (int i = 0; i < total_rays; ++i)
            (cam_rays_[i].ray.hits ? hit_idx : miss_idx).push_back(i);

        for (size_t c0 = 0; c0 < hit_idx.size(); c0 += cfg_.chunk_rays) {
            size_t c1 = std::min(hit_idx.size(), c0 + cfg_.chunk_rays);
            int rc = (int)(c1 - c0);
            std::vector<Ray> rays(rc);
            Tensor ts(rc, cfg_.samples_per_ray);
            Tensor obs_rgb(rc, 3), obs_mask(rc, 1);
            for (int r = 0; r < rc; ++r) {
                const CamRay& cr = cam_rays_[hit_idx[c0 + r]];
                rays[r] = cr.ray;
                for (int i = 0; i < cfg_.samples_per_ray; ++i) ts(r, i) = cr.ts[i];
                obs_rgb(r, 0) = cr.observed.x;
                obs_rgb(r, 1) = cr.observed.y;
                obs_rgb(r, 2) = cr.observed.z;
                obs_mask(r, 0) = cr.mask_target;
            }
            ad::Tape t;
            auto batch = renderer_.camera_batch(t, rays, ts);
            ad::Value csum = t.sum_all(t.abs(t.sub(batch.color, t.constant(obs_rgb))));
            ad::Value msum = t.sum_all(t.square(t.sub(batch.c.mask, t.constant(obs_mask))));
            ad::Value obj = t.add(t.scalar_mul(csum, inv_n),
                                  t.scalar_mul(msum, cfg_.lambda_mask * inv_n));
            b.color += csum.scalar() * inv_n;
            b.mask += msum.scalar() * inv_n;
            backward_accumulate(t, obj);
        }

        if (!miss_idx.empty()) {
            std::vector<int> cells;
            Tensor obs(miss_idx.size() > 0 ? (int)miss_idx.size() : 0, 3);
            for (int r = 0; r < (int)miss_idx.size(); ++r) {
                const CamRay& cr = cam_rays_[miss_idx[r]];
                cells.push_back(f_.bg.cell_of(cr.ray.dir));
                obs(r, 0) = cr.observed.x;
                obs(r, 1) = cr.observed.y;
                obs(r, 2) = cr.observed.z;
                b.mask += cr.mask_target * cr.mask_target * inv_n;  // rendered m is exactly 0
            }
            ad::Tape t;
            ad::Value bgc = f_.bg.colors(t, f_.store, std::move(cells));
            ad::Value csum = t.sum_all(t.abs(t.sub(bgc, t.constant(obs))));
            ad::Value obj = t.scalar_mul(csum, inv_n);
            b.color += csum.scalar() * inv_n;
            backward_accumulate(t, obj);
        }
    }

    void lidar_pass(LossBreakdown& b) {
        struct LidRay {
            Ray ray;
            double depth, intensity;
            std::vector<double> ts;
        };
        std::vector<LidRay> rays;
        for (int r = 0; r < cfg_.lidar_rays; ++r) {
            auto [si, k] = lidar_refs_[rng_.uniform_index(lidar_refs_.size())];
            const LidarSweep& sw = ds_.sweeps[si];
            Ray ray = make_ray(sw.pose.t, sw.pose.apply_dir(sw.dirs[k]), ds_.cuboid);
            if (!ray.hits) continue;  // grazing rays can clip past the box corner
            LidRay lr;
            lr.ray = ray;
            lr.depth = sw.depth[k];
            lr.intensity = sw.intensity[k];
            lr.ts = stratified_ts(ray.t_near, ray.t_far, cfg_.samples_per_ray,
                                  [&] { return rng_.uniform(); });
            rays.push_back(std::move(lr));
        }
        if (rays.empty()) return;
        const double inv_n = 1.0 / rays.size();

        for (size_t c0 = 0; c0 < rays.size(); c0 += cfg_.chunk_rays) {
            size_t c1 = std::min(rays.size(), c0 + cfg_.chunk_rays);
            int rc = (int)(c1 - c0);
            std::vector<Ray> rr(rc);
            Tensor ts(rc, cfg_.samples_per_ray), obs_d(rc, 1), obs_i(rc, 1);
            for (int r = 0; r < rc; ++r) {
                const LidRay& lr = rays[c0 + r];
                rr[r] = lr.ray;
                for (int i = 0; i < cfg_.samples_per_ray; ++i) ts(r, i) = lr.ts[i];
                obs_d(r, 0) = lr.depth;
                obs_i(r, 0) = lr.intensity;
            }
            ad::Tape t;
            auto batch = renderer_.lidar_batch(t, rr, ts);
            // loss_lidar normalizes by its own batch; rescale to the full batch
            ad::Value chunk = loss_lidar(t, batch.depth, batch.intensity, batch.c.weights, ts,
                                         obs_d, obs_i, cfg_.lambda_int, cfg_.epsilon);
            double scale = (double)rc * inv_n;
            ad::Value obj = t.scalar_mul(chunk, cfg_.lambda_lidar * scale);
            b.lidar += chunk.scalar() * scale;
            backward_accumulate(t, obj);
        }
    }

    Tensor sample_eikonal_points() {
        int m = std::max(cfg_.eikonal_points, cfg_.symmetry_points);
        Tensor pts(m, 3);
        for (int i = 0; i < m; ++i) {
            Vec3 p;
            bool near_surface = !lidar_points_.empty() && (i % 2 == 1);
            if (near_surface) {
                const Vec3& c = lidar_points_[rng_.uniform_index(lidar_points_.size())];
                p = c + Vec3{rng_.normal(), rng_.normal(), rng_.normal()} * 0.05;
            } else {
                Vec3 local{rng_.uniform(-padded_.half_extents.x, padded_.half_extents.x),
                           rng_.uniform(-padded_.half_extents.y, padded_.half_extents.y),
                           rng_.uniform(-padded_.half_extents.z, padded_.half_extents.z)};
                p = padded_.to_world(local);
            }
            pts(i, 0) = p.x;
            pts(i, 1) = p.y;
            pts(i, 2) = p.z;
        }
        return pts;
    }

    void eikonal_pass(LossBreakdown& b, const Tensor& pts) {
        int m = cfg_.eikonal_points;
        Tensor sub(m, 3);
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c) sub(i, c) = pts(i % pts.rows(), c);
        ad::Tape t;
        ad::Value p = t.leaf(std::move(sub), true);
        ad::Value le = loss_eikonal(
            t, [&](ad::Tape& tt, ad::Value q) { return f_.sdf.eval(tt, f_.store, q).s; }, p);
        b.eikonal += le.scalar();
        backward_accumulate(t, t.scalar_mul(le, cfg_.lambda_eikonal));
    }

    void symmetry_pass(LossBreakdown& b, const Tensor& pts) {
        int m = std::min(cfg_.symmetry_points, pts.rows());
        if (m < 1) return;
        Tensor sub(m, 3);
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c) sub(i, c) = pts(i, c);
        ad::Tape t;
        ad::Value p = t.leaf(std::move(sub), true);
        ad::Value ls = loss_symmetry(t, f_.store, neural_symmetry_fns(f_), p);
        b.symmetry += ls.scalar();
        backward_accumulate(t, t.scalar_mul(ls, cfg_.lambda_sym));
    }

    void backward_accumulate(ad::Tape& t, ad::Value obj) {
        std::vector<std::pair<int, int>> leaves(t.param_leaves().begin(), t.param_leaves().end());
        std::sort(leaves.begin(), leaves.end());
        std::vector<ad::Value> wrt;
        wrt.reserve(leaves.size());
        for (auto& [pid, node] : leaves) wrt.push_back(ad::Value{&t, node});
        auto grads = t.gradients(obj, wrt);
        for (size_t k = 0; k < leaves.size(); ++k) {
            Tensor& g = f_.store.at(leaves[k].first).grad;
            const Tensor& add = grads[k].val();
            for (long e = 0; e < g.size(); ++e) g.at(e) += add.at(e);
        }
    }

    NeuralFields& f_;
    const SceneDataset& ds_;
    TrainingConfig cfg_;
    Rng rng_;
    VolumeRenderer renderer_;
    std::vector<int> train_frames_;
    std::vector<std::pair<int, int>> lidar_refs_;
    std::vector<Vec3> lidar_points_;
    OrientedBox padded_;
    std::vector<CamRay> cam_rays_;
    long adam_steps_ = 0;
};

}  // namespace sdfrec
