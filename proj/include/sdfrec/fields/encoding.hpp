#pragma once

#include <cmath>
#include <vector>

#include "sdfrec/core/graph.hpp"

namespace sdfrec {

// Frequency encoding [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x),
// cos(2^{L-1} pi x)]; output dim = input_dim * (2L + 1).
struct PositionalEncoding {
    int freqs = 6;

    int out_dim(int in_dim) const { return in_dim * (2 * freqs + 1); }

    ad::Value encode(ad::Tape& t, ad::Value x) const {
        if (freqs == 0) return x;
        std::vector<ad::Value> parts;
        parts.reserve(1 + 2 * freqs);
        parts.push_back(x);
        for (int f = 0; f < freqs; ++f) {
            double scale = std::ldexp(M_PI, f);  // 2^f * pi
            ad::Value sx = t.scalar_mul(x, scale);
            parts.push_back(t.sin(sx));
            parts.push_back(t.cos(sx));
        }
        return t.concat_cols(parts);
    }

    std::vector<double> encode_plain(const std::vector<double>& x) const {
        std::vector<double> out;
        out.reserve(out_dim((int)x.size()));
        out.insert(out.end(), x.begin(), x.end());
        for (int f = 0; f < freqs; ++f) {
            double scale = std::ldexp(M_PI, f);
            for (double v : x) out.push_back(std::sin(scale * v));
            for (double v : x) out.push_back(std::cos(scale * v));
        }
        return out;
    }
};

}  // namespace sdfrec
