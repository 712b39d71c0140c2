#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdfrec/core/checkpoint.hpp"
#include "sdfrec/core/graph.hpp"
#include "sdfrec/core/rng.hpp"
#include "sdfrec/core/vecmath.hpp"
#include "sdfrec/fields/encoding.hpp"
#include "sdfrec/fields/mlp.hpp"
#include "sdfrec/render/shading.hpp"

namespace sdfrec {

enum class RadianceModel { Phong, Mlp };

struct FieldConfig {
    int sdf_hidden = 256;
    int sdf_layers = 8;
    int sdf_skip = 3;  // weight layer receiving the input skip
    int feat_dim = 256;
    int pe_freqs = 6;
    double softplus_sharpness = 100.0;
    double beta_init = 20.0;
    int refl_hidden = 256;
    int refl_layers = 4;
    double gamma_cap = 512.0;
    int env_azimuth = 16;
    int env_elevation = 8;
    int bg_azimuth = 16;
    int bg_elevation = 8;
    RadianceModel radiance = RadianceModel::Phong;
    uint64_t init_seed = 1;

    nlohmann::json to_json() const {
        return {{"sdf_hidden", sdf_hidden},
                {"sdf_layers", sdf_layers},
                {"sdf_skip", sdf_skip},
                {"feat_dim", feat_dim},
                {"pe_freqs", pe_freqs},
                {"softplus_sharpness", softplus_sharpness},
                {"beta_init", beta_init},
                {"refl_hidden", refl_hidden},
                {"refl_layers", refl_layers},
                {"gamma_cap", gamma_cap},
                {"env_azimuth", env_azimuth},
                {"env_elevation", env_elevation},
                {"bg_azimuth", bg_azimuth},
                {"bg_elevation", bg_elevation},
                {"radiance", radiance == RadianceModel::Phong ? "phong" : "mlp"},
                {"init_seed", init_seed}};
    }
    static FieldConfig from_json(const nlohmann::json& j) {
        FieldConfig c;
        c.sdf_hidden = j.at("sdf_hidden");
        c.sdf_layers = j.at("sdf_layers");
        c.sdf_skip = j.at("sdf_skip");
        c.feat_dim = j.at("feat_dim");
        c.pe_freqs = j.at("pe_freqs");
        c.softplus_sharpness = j.at("softplus_sharpness");
        c.beta_init = j.at("beta_init");
        c.refl_hidden = j.at("refl_hidden");
        c.refl_layers = j.at("refl_layers");
        c.gamma_cap = j.at("gamma_cap");
        c.env_azimuth = j.at("env_azimuth");
        c.env_elevation = j.at("env_elevation");
        c.bg_azimuth = j.at("bg_azimuth");
        c.bg_elevation = j.at("bg_elevation");
        c.radiance = j.at("radiance") == "mlp" ? RadianceModel::Mlp : RadianceModel::Phong;
        c.init_seed = j.at("init_seed");
        return c;
    }
};

// ---- SDF field ---------------------------------------------------------------

struct SdfBatch {
    ad::Value points;  // [N x 3] leaf, differentiable
    ad::Value s;       // [N x 1]
    ad::Value feat;    // [N x F]
};

class SdfField {
public:
    SdfField() = default;
    SdfField(const FieldConfig& cfg) : pe_{cfg.pe_freqs} {
        def_.prefix = "sdf";
        def_.act = Activation::Softplus;
        def_.softplus_sharpness = cfg.softplus_sharpness;
        def_.skip_at = cfg.sdf_skip;
        def_.widths.push_back(pe_.out_dim(3));
        for (int l = 0; l < cfg.sdf_layers - 1; ++l) def_.widths.push_back(cfg.sdf_hidden);
        def_.widths.push_back(1 + cfg.feat_dim);
        feat_dim_ = cfg.feat_dim;
        beta_init_ = cfg.beta_init;
    }

    void register_params(ParamStore& store, Rng& rng) const {
        def_.register_params(store, rng);
        store.add("sdf.log_beta", Tensor::scalar(std::log(beta_init_)));
    }

    // Evaluates s and features; `points` must already be a leaf on the tape.
    SdfBatch eval(ad::Tape& t, ParamStore& store, ad::Value points) const {
        ad::Value enc = pe_.encode(t, points);
        ad::Value out = def_.forward(t, store, enc);
        SdfBatch b;
        b.points = points;
        b.s = t.slice_cols(out, 0, 1);
        b.feat = t.slice_cols(out, 1, feat_dim_);
        return b;
    }

    // Raw spatial gradient of s at every row of the batch, graph-valued so it
    // stays differentiable w.r.t. network parameters.
    ad::Value spatial_gradient(ad::Tape& t, const SdfBatch& b) const {
        return t.gradient(t.sum_all(b.s), b.points);
    }

    // Unit normals with a guarded norm; callers relying on the guard should
    // check `min_grad_norm` first (sdf_normal_at does).
    ad::Value unit_normals(ad::Tape& t, ad::Value grad) const {
        ad::Value n2 = t.sum_rows(t.square(grad));
        ad::Value inv = t.reciprocal(t.sqrt(t.clamp_min(n2, 1e-24)));
        return t.mul_col_vec(grad, inv);
    }

    ad::Value beta(ad::Tape& t, ParamStore& store) const {
        int id = store.find("sdf.log_beta");
        return t.exp(t.param_leaf(store.at(id).value, id));
    }
    double beta_value(const ParamStore& store) const {
        return std::exp(store.at("sdf.log_beta").value.value());
    }

    // Single-point conveniences (build a throwaway graph).
    std::pair<double, std::vector<double>> eval_at(ParamStore& store, const Vec3& x) const {
        ad::Tape t;
        ad::Value p = t.leaf(Tensor(1, 3, {x.x, x.y, x.z}), true);
        SdfBatch b = eval(t, store, p);
        std::vector<double> feat(b.feat.val().data(), b.feat.val().data() + feat_dim_);
        return {b.s.val().value(), std::move(feat)};
    }

    Vec3 normal_at(ParamStore& store, const Vec3& x) const {
        ad::Tape t;
        ad::Value p = t.leaf(Tensor(1, 3, {x.x, x.y, x.z}), true);
        SdfBatch b = eval(t, store, p);
        ad::Value g = spatial_gradient(t, b);
        Vec3 raw{g.val()(0, 0), g.val()(0, 1), g.val()(0, 2)};
        double n = norm(raw);
        if (n <= 1e-8)
            throw PreconditionError("degenerate SDF gradient, |grad| = " + std::to_string(n));
        return raw / n;
    }

    const MlpDef& mlp() const { return def_; }
    const PositionalEncoding& encoding() const { return pe_; }
    int feat_dim() const { return feat_dim_; }

    // Reinitializes the network as an approximate sphere SDF: stochastic
    // geometric init for the hidden stack, then a least-squares fit of the
    // distance output row against |x| - radius on a fixed sample set. The fit
    // absorbs the gain drift the random init leaves at finite width.
    void sphere_init(ParamStore& store, double radius, uint64_t seed) const {
        geometric_sphere_init(def_, store, radius, seed);

        const int n_pts = 4096;
        const double extent = std::max(1.0, radius) * 1.3;
        Rng rng(hash_mix(seed ^ 0xca11b8a7eull));
        Tensor pts(n_pts, 3);
        std::vector<double> target(n_pts);
        for (int i = 0; i < n_pts; ++i) {
            Vec3 x{rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                   rng.uniform(-extent, extent)};
            pts(i, 0) = x.x;
            pts(i, 1) = x.y;
            pts(i, 2) = x.z;
            target[i] = norm(x) - radius;
        }
        ad::Tape t;
        ad::Value h = def_.forward_to_last(t, store, pe_.encode(t, t.leaf(std::move(pts))));
        const Tensor& hv = h.val();
        int d = hv.cols();

        // normal equations over [H 1]
        Tensor a(d + 1, d + 1);
        std::vector<double> rhs(d + 1, 0.0);
        const Tensor hth = matmul(hv, hv, Trans::T, Trans::N);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a(i, j) = hth(i, j);
        for (int i = 0; i < n_pts; ++i) {
            for (int j = 0; j < d; ++j) {
                a(d, j) += hv(i, j);
                rhs[j] += hv(i, j) * target[i];
            }
            rhs[d] += target[i];
        }
        for (int j = 0; j < d; ++j) a(j, d) = a(d, j);
        a(d, d) = n_pts;
        std::vector<double> w = detail::solve_spd(std::move(a), std::move(rhs), 1e-6);

        int last = def_.layer_count() - 1;
        Tensor& wl = store.at(def_.prefix + ".w" + std::to_string(last)).value;
        Tensor& bl = store.at(def_.prefix + ".b" + std::to_string(last)).value;
        for (int i = 0; i < d; ++i) wl(i, 0) = w[i];
        bl(0, 0) = w[d];
    }

private:
    MlpDef def_;
    PositionalEncoding pe_;
    int feat_dim_ = 256;
    double beta_init_ = 20.0;
};

// ---- reflectance field -------------------------------------------------------

struct ReflectanceSample {
    Vec3 albedo;
    double spec_albedo = 0;
    double shininess = 1;
    double intensity = 0;
};

struct ReflectanceBatch {
    ad::Value albedo;     // [N x 3], sigmoid-bounded
    ad::Value spec;       // [N x 1], sigmoid-bounded
    ad::Value gamma;      // [N x 1], softplus + 1, capped
    ad::Value intensity;  // [N x 1], softplus
};

class ReflectanceField {
public:
    ReflectanceField() = default;
    ReflectanceField(const FieldConfig& cfg) : gamma_cap_(cfg.gamma_cap) {
        def_.prefix = "refl";
        def_.act = Activation::Relu;
        def_.widths.push_back(3 + 3 + cfg.feat_dim);
        for (int l = 0; l < cfg.refl_layers - 1; ++l) def_.widths.push_back(cfg.refl_hidden);
        def_.widths.push_back(6);  // rgb albedo, specular, shininess, intensity
    }

    void register_params(ParamStore& store, Rng& rng) const { def_.register_params(store, rng); }

    ReflectanceBatch eval(ad::Tape& t, ParamStore& store, ad::Value x, ad::Value n,
                          ad::Value feat) const {
        ad::Value in = t.concat_cols({x, n, feat});
        ad::Value out = def_.forward(t, store, in);
        ReflectanceBatch b;
        b.albedo = t.sigmoid(t.slice_cols(out, 0, 3));
        b.spec = t.sigmoid(t.slice_cols(out, 3, 1));
        b.gamma = t.clamp_max(t.scalar_add(t.softplus(t.slice_cols(out, 4, 1)), 1.0), gamma_cap_);
        b.intensity = t.softplus(t.slice_cols(out, 5, 1));
        return b;
    }

    ReflectanceSample eval_at(ParamStore& store, const Vec3& x, const Vec3& n,
                              const std::vector<double>& feat) const {
        ad::Tape t;
        std::vector<double> xv{x.x, x.y, x.z}, nv{n.x, n.y, n.z};
        ad::Value vx = t.leaf(Tensor(1, 3, xv));
        ad::Value vn = t.leaf(Tensor(1, 3, nv));
        ad::Value vf = t.leaf(Tensor(1, (int)feat.size(), feat));
        ReflectanceBatch b = eval(t, store, vx, vn, vf);
        ReflectanceSample s;
        s.albedo = {b.albedo.val()(0, 0), b.albedo.val()(0, 1), b.albedo.val()(0, 2)};
        s.spec_albedo = b.spec.val().value();
        s.shininess = b.gamma.val().value();
        s.intensity = b.intensity.val().value();
        return s;
    }

    const MlpDef& mlp() const { return def_; }

private:
    MlpDef def_;
    double gamma_cap_ = 512.0;
};

// ---- environment map ----------------------------------------------------------

class EnvironmentMap {
public:
    EnvironmentMap() = default;
    EnvironmentMap(const FieldConfig& cfg) {
        layout_.azimuth = cfg.env_azimuth;
        layout_.elevation = cfg.env_elevation;
        layout_.ambient_row = true;
        geom_ = layout_.unit_cells();
    }

    void register_params(ParamStore& store) const {
        // softplus reparameterization keeps intensities nonnegative; start
        // uniform at 1/pi so a 0.5-albedo Lambertian renders mid-gray.
        double raw = std::log(std::expm1(1.0 / M_PI));
        store.add("env.raw", Tensor::full(layout_.cell_count(), 3, raw));
    }

    // Learnable radiance per cell, [C x 3].
    ad::Value radiance(ad::Tape& t, ParamStore& store) const {
        int id = store.find("env.raw");
        return t.softplus(t.param_leaf(store.at(id).value, id));
    }

    // Radiance premultiplied by per-cell solid angle (the quadrature weights
    // of the shading sums), [C x 3].
    ad::Value weighted_radiance(ad::Tape& t, ParamStore& store) const {
        Tensor dw(layout_.cell_count(), 1);
        for (int i = 0; i < layout_.cell_count(); ++i) dw(i, 0) = geom_.domega[i];
        return t.mul_col_vec(radiance(t, store), t.constant(std::move(dw)));
    }

    Tensor directions() const {
        Tensor d(layout_.cell_count(), 3);
        for (int i = 0; i < layout_.cell_count(); ++i) {
            d(i, 0) = geom_.dirs[i].x;
            d(i, 1) = geom_.dirs[i].y;
            d(i, 2) = geom_.dirs[i].z;
        }
        return d;
    }

    // Snapshot with the current parameter values, for plain shading.
    EnvCells cells(const ParamStore& store) const {
        EnvCells c = geom_;
        const Tensor& raw = store.at("env.raw").value;
        for (int i = 0; i < c.count(); ++i)
            c.radiance[i] = {detail_softplus(raw(i, 0)), detail_softplus(raw(i, 1)),
                             detail_softplus(raw(i, 2))};
        return c;
    }

    struct CellQuery {
        Vec3 omega;
        Vec3 radiance;
        double domega;
    };
    // row = 0..elevation-1 for upper bands, row = elevation for the ambient row.
    CellQuery query(const ParamStore& store, int azimuth_idx, int row_idx) const {
        int rows = layout_.elevation + (layout_.ambient_row ? 1 : 0);
        if (azimuth_idx < 0 || azimuth_idx >= layout_.azimuth || row_idx < 0 || row_idx >= rows)
            throw PreconditionError("environment map cell index out of range");
        int i = row_idx * layout_.azimuth + azimuth_idx;
        const Tensor& raw = store.at("env.raw").value;
        return {geom_.dirs[i],
                {detail_softplus(raw(i, 0)), detail_softplus(raw(i, 1)), detail_softplus(raw(i, 2))},
                geom_.domega[i]};
    }

    const EnvLayout& layout() const { return layout_; }
    int cell_count() const { return layout_.cell_count(); }

    // Overwrites parameters so the map reproduces the given radiances.
    void set_radiance(ParamStore& store, const EnvCells& target) const {
        Tensor& raw = store.at("env.raw").value;
        for (int i = 0; i < layout_.cell_count(); ++i) {
            raw(i, 0) = inv_softplus(target.radiance[i].x);
            raw(i, 1) = inv_softplus(target.radiance[i].y);
            raw(i, 2) = inv_softplus(target.radiance[i].z);
        }
    }

    static double inv_softplus(double y) {
        y = std::max(y, 1e-9);
        return y > 30 ? y : std::log(std::expm1(y));
    }

private:
    static double detail_softplus(double x) { return ad::detail::softplus_stable(x); }

    EnvLayout layout_;
    EnvCells geom_;
};

// ---- learned background -------------------------------------------------------

// Constant radiance per view direction on a full-sphere grid; stands in for
// the scene behind the asset. Discarded when rendering the asset alone.
class BackgroundGrid {
public:
    BackgroundGrid() = default;
    BackgroundGrid(const FieldConfig& cfg) : az_(cfg.bg_azimuth), el_(cfg.bg_elevation) {}

    void register_params(ParamStore& store) const {
        store.add("bg.raw", Tensor(az_ * el_, 3));  // sigmoid(0) = mid gray
    }

    int cell_of(const Vec3& dir) const {
        double theta = std::asin(std::clamp(dir.z, -1.0, 1.0));  // [-pi/2, pi/2]
        double phi = std::atan2(dir.y, dir.x);
        if (phi < 0) phi += 2.0 * M_PI;
        int row = std::min(el_ - 1, (int)((theta + M_PI_2) / M_PI * el_));
        int col = std::min(az_ - 1, (int)(phi / (2.0 * M_PI) * az_));
        return row * az_ + col;
    }

    ad::Value colors(ad::Tape& t, ParamStore& store, std::vector<int> cell_indices) const {
        int id = store.find("bg.raw");
        ad::Value raw = t.param_leaf(store.at(id).value, id);
        return t.sigmoid(t.gather_rows(raw, std::move(cell_indices)));
    }

    Vec3 color_at(const ParamStore& store, const Vec3& dir) const {
        const Tensor& raw = store.at("bg.raw").value;
        int c = cell_of(dir);
        return {ad::detail::sigmoid_stable(raw(c, 0)), ad::detail::sigmoid_stable(raw(c, 1)),
                ad::detail::sigmoid_stable(raw(c, 2))};
    }

private:
    int az_ = 16, el_ = 8;
};

// ---- view-conditioned MLP radiance (evaluation fixture) ------------------------

// Direct color head used by the radiance-model comparison: maps
// (x, view, normal, feat) straight to rgb with no lighting structure.
class MlpRadiance {
public:
    MlpRadiance() = default;
    MlpRadiance(const FieldConfig& cfg) {
        def_.prefix = "mlprad";
        def_.act = Activation::Relu;
        def_.widths = {3 + 3 + 3 + cfg.feat_dim, cfg.refl_hidden, cfg.refl_hidden,
                       cfg.refl_hidden, 3};
    }
    void register_params(ParamStore& store, Rng& rng) const { def_.register_params(store, rng); }

    ad::Value eval(ad::Tape& t, ParamStore& store, ad::Value x, ad::Value view, ad::Value n,
                   ad::Value feat) const {
        return t.sigmoid(def_.forward(t, store, t.concat_cols({x, view, n, feat})));
    }

private:
    MlpDef def_;
};

// ---- bundle --------------------------------------------------------------------

// The learned scene state: all trainable parameters plus the architecture
// needed to rebuild evaluators from a checkpoint.
class NeuralFields {
public:
    FieldConfig cfg;
    ParamStore store;
    SdfField sdf;
    ReflectanceField refl;
    EnvironmentMap env;
    BackgroundGrid bg;
    MlpRadiance mlp_radiance;

    explicit NeuralFields(FieldConfig c) : cfg(c), sdf(c), refl(c), env(c), bg(c), mlp_radiance(c) {
        Rng rng(hash_mix(cfg.init_seed ^ 0xf1e1d5u));
        sdf.register_params(store, rng);
        refl.register_params(store, rng);
        env.register_params(store);
        bg.register_params(store);
        if (cfg.radiance == RadianceModel::Mlp) mlp_radiance.register_params(store, rng);
        // Mirror transform: world-to-canonical rotation (axis-angle) and
        // translation, optimized 10x slower than the networks.
        store.add("sym.rot", Tensor(1, 3), 0.1);
        store.add("sym.trans", Tensor(1, 3), 0.1);
    }

    void sphere_init(double radius) { sdf.sphere_init(store, radius, cfg.init_seed); }

    void save(const std::string& path, nlohmann::json extra = {}) const {
        nlohmann::json manifest = {{"kind", "sdfrec-fields"}, {"config", cfg.to_json()}};
        if (!extra.is_null() && !extra.empty()) manifest["extra"] = std::move(extra);
        ckpt::save(path, store, manifest);
    }

    static NeuralFields load(const std::string& path) {
        ckpt::Loaded l = ckpt::load(path);
        if (!l.manifest.contains("config"))
            throw IoError("checkpoint has no field config manifest: " + path);
        NeuralFields f(FieldConfig::from_json(l.manifest["config"]));
        for (auto& [name, tensor] : l.params) {
            int i = f.store.find(name);
            if (i < 0) throw IoError("checkpoint parameter not in model: " + name);
            if (!f.store.at(i).value.same_shape(tensor))
                throw IoError("checkpoint shape mismatch for " + name);
            f.store.at(i).value = std::move(tensor);
        }
        return f;
    }
};

}  // namespace sdfrec
