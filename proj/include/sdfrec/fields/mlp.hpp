#pragma once

#include <string>
#include <vector>

#include "sdfrec/core/checkpoint.hpp"
#include "sdfrec/core/graph.hpp"
#include "sdfrec/core/rng.hpp"

namespace sdfrec {

enum class Activation { Softplus, Relu };

namespace detail {

// Solves (A + ridge I) x = b for symmetric positive definite A, in place.
inline std::vector<double> solve_spd(Tensor a, std::vector<double> b, double ridge) {
    int n = a.rows();
    for (int i = 0; i < n; ++i) a(i, i) += ridge;
    // Cholesky A = L L^T
    for (int j = 0; j < n; ++j) {
        double d = a(j, j);
        for (int k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (d <= 0) throw Error("internal", "cholesky failed in least squares");
        d = std::sqrt(d);
        a(j, j) = d;
        for (int i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / d;
        }
    }
    for (int i = 0; i < n; ++i) {  // L y = b
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= a(i, k) * b[k];
        b[i] = s / a(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {  // L^T x = y
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
        b[i] = s / a(i, i);
    }
    return b;
}

}  // namespace detail

// Fully connected net; parameters live in a ParamStore under
// "<prefix>.w<i>" / "<prefix>.b<i>". Optional skip feeds the network input
// into one hidden layer's input (concatenated after the hidden features).
struct MlpDef {
    std::string prefix;
    std::vector<int> widths;  // in, hidden..., out
    int skip_at = -1;         // weight-layer index whose input gains the skip
    Activation act = Activation::Softplus;
    double softplus_sharpness = 100.0;

    int layer_count() const { return (int)widths.size() - 1; }
    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }

    int layer_in(int l) const { return widths[l] + (l == skip_at ? widths[0] : 0); }

    void register_params(ParamStore& store, Rng& rng) const {
        for (int l = 0; l < layer_count(); ++l) {
            int in = layer_in(l), out = widths[l + 1];
            Tensor w(in, out), b(1, out);
            double std = std::sqrt(2.0 / in);
            for (long i = 0; i < w.size(); ++i) w.at(i) = rng.normal() * std;
            store.add(prefix + ".w" + std::to_string(l), std::move(w));
            store.add(prefix + ".b" + std::to_string(l), std::move(b));
        }
    }

    ad::Value weight(ad::Tape& t, ParamStore& s, int l) const {
        int id = s.find(prefix + ".w" + std::to_string(l));
        return t.param_leaf(s.at(id).value, id);
    }
    ad::Value bias(ad::Tape& t, ParamStore& s, int l) const {
        int id = s.find(prefix + ".b" + std::to_string(l));
        return t.param_leaf(s.at(id).value, id);
    }

    // x: [N x in_dim]; returns [N x out_dim]. No activation after the last layer.
    ad::Value forward(ad::Tape& t, ParamStore& s, ad::Value x) const {
        ad::Value h = x;
        for (int l = 0; l < layer_count(); ++l) {
            if (l == skip_at) h = t.concat_cols({h, x});
            h = t.add_row_vec(t.matmul(h, weight(t, s, l)), bias(t, s, l));
            if (l + 1 < layer_count())
                h = act == Activation::Softplus ? t.softplus(h, softplus_sharpness) : t.relu(h);
        }
        return h;
    }

    // Activations feeding the final layer (skip already applied).
    ad::Value forward_to_last(ad::Tape& t, ParamStore& s, ad::Value x) const {
        ad::Value h = x;
        for (int l = 0; l < layer_count() - 1; ++l) {
            if (l == skip_at) h = t.concat_cols({h, x});
            h = t.add_row_vec(t.matmul(h, weight(t, s, l)), bias(t, s, l));
            h = act == Activation::Softplus ? t.softplus(h, softplus_sharpness) : t.relu(h);
        }
        if (skip_at == layer_count() - 1) h = t.concat_cols({h, x});
        return h;
    }
};

// Reinitializes an SDF-style MLP so its first output approximates the signed
// distance of a sphere of the given radius: hidden weights N(0, sqrt(2/out)),
// final layer near-constant sqrt(pi/in) with bias -radius, and the rows that
// read frequency-encoded inputs zeroed so initialization sees raw xyz only.
inline void geometric_sphere_init(const MlpDef& def, ParamStore& store, double radius,
                                  uint64_t seed, int raw_dims = 3) {
    if (radius <= 0) throw PreconditionError("sphere init requires radius > 0");
    Rng rng(hash_mix(seed ^ 0x5ee5u));
    int L = def.layer_count();
    for (int l = 0; l < L; ++l) {
        int in = def.layer_in(l), out = def.widths[l + 1];
        Tensor w(in, out), b(1, out);
        if (l == L - 1) {
            double mean = std::sqrt(M_PI) / std::sqrt((double)in);
            for (long i = 0; i < w.size(); ++i) w.at(i) = mean + rng.normal() * 1e-4;
            for (int j = 0; j < out; ++j) b(0, j) = -radius;
        } else {
            double std = std::sqrt(2.0 / out);
            for (long i = 0; i < w.size(); ++i) w.at(i) = rng.normal() * std;
            if (l == 0) {
                // zero everything past the raw coordinates (the PE features)
                for (int r = raw_dims; r < in; ++r)
                    for (int c = 0; c < out; ++c) w(r, c) = 0.0;
            } else if (l == def.skip_at) {
                // zero the encoded part of the skip block, keep raw xyz
                for (int r = def.widths[l] + raw_dims; r < in; ++r)
                    for (int c = 0; c < out; ++c) w(r, c) = 0.0;
            }
        }
        store.at(def.prefix + ".w" + std::to_string(l)).value = std::move(w);
        store.at(def.prefix + ".b" + std::to_string(l)).value = std::move(b);
    }
}

}  // namespace sdfrec
