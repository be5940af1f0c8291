#include "vqseg/quantiser.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vqseg/rng.hpp"

namespace vqseg {

Codebook codebook_init(int K, int D, uint64_t seed, bool unit_sphere) {
    if (K < 2) throw ConfigError("codebook_init: K must be >= 2");
    if (D < 1) throw ConfigError("codebook_init: D must be >= 1");
    Rng rng(substream_seed(seed, "codebook"));
    std::vector<float> v((size_t)K * D);
    const double std = 1.0 / std::sqrt(double(D));
    for (auto& x : v) x = static_cast<float>(rng.normal() * std);
    if (unit_sphere) {
        for (int k = 0; k < K; ++k) {
            double n2 = 0.0;
            for (int d = 0; d < D; ++d) n2 += double(v[(size_t)k * D + d]) * v[(size_t)k * D + d];
            const double inv = 1.0 / std::sqrt(n2);
            for (int d = 0; d < D; ++d) v[(size_t)k * D + d] = static_cast<float>(v[(size_t)k * D + d] * inv);
        }
    }
    Codebook cb;
    cb.K = K;
    cb.D = D;
    cb.unit_sphere = unit_sphere;
    cb.vectors = Tensor::from_data({K, D}, std::move(v), true);
    return cb;
}

std::vector<int> nearest_assign(const std::vector<float>& e_rows, int M, int D,
                                const Codebook& codebook) {
    if (D != codebook.D) throw DimensionError("nearest_assign: row dimension != codebook D");
    const float* cb = codebook.vectors.data().data();
    std::vector<int> idx(M);
#pragma omp parallel for if (M > 64)
    for (int m = 0; m < M; ++m) {
        const float* e = e_rows.data() + (size_t)m * D;
        double best = 1e300;
        int best_k = 0;
        for (int k = 0; k < codebook.K; ++k) {
            const float* l = cb + (size_t)k * D;
            double d2 = 0.0;
            for (int d = 0; d < D; ++d) {
                const double diff = double(e[d]) - double(l[d]);
                d2 += diff * diff;
            }
            if (d2 < best) {  // strict: ties keep the lowest index
                best = d2;
                best_k = k;
            }
        }
        idx[m] = best_k;
    }
    return idx;
}

std::vector<int> nearest_assign(const Tensor& e_rows, const Codebook& codebook) {
    const auto& s = e_rows.shape();
    if (s.size() != 2) throw DimensionError("nearest_assign: expected [M,D] tensor");
    return nearest_assign(e_rows.data(), s[0], s[1], codebook);
}

QuantOutput quantise(const Tensor& e, const Codebook& codebook, float beta) {
    if (beta < 0.0f) throw ConfigError("quantise: beta must be non-negative");
    const auto& es = e.shape();

    Tensor rows;
    bool spatial = false;
    int N = 0, H = 0, W = 0;
    if (es.size() == 4) {
        if (es[1] != codebook.D) throw DimensionError("quantise: channel dim != codebook D");
        spatial = true;
        N = es[0];
        H = es[2];
        W = es[3];
        rows = nchw_to_rows(e);
    } else if (es.size() == 2) {
        if (es[1] != codebook.D) throw DimensionError("quantise: row dim != codebook D");
        rows = e;
    } else {
        throw DimensionError("quantise: expected [N,D,H,W] or [M,D]");
    }
    const int M = rows.shape()[0];

    QuantOutput out;
    out.indices = nearest_assign(rows, codebook);

    // gathered carries gradient into the codebook; the straight-through path
    // sees only its values
    Tensor gathered = gather_rows(codebook.vectors, out.indices);
    Tensor zq_rows = straight_through(rows, detach(gathered));
    out.z_q = spatial ? rows_to_nchw(zq_rows, N, codebook.D, H, W) : zq_rows;

    const float inv_m = 1.0f / static_cast<float>(M);
    out.codebook_loss = scale(sum(square(sub(detach(rows), gathered))), inv_m);
    out.commitment_loss = scale(sum(square(sub(rows, detach(gathered)))), beta * inv_m);
    return out;
}

void codebook_save_csv(const Codebook& cb, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("codebook_save_csv: cannot open " + path);
    for (int k = 0; k < cb.K; ++k) {
        for (int d = 0; d < cb.D; ++d) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9g", cb.vectors.data()[(size_t)k * cb.D + d]);
            f << (d ? "," : "") << buf;
        }
        f << '\n';
    }
}

Codebook codebook_load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("codebook_load_csv: cannot open " + path);
    std::vector<float> vals;
    std::string line;
    int K = 0, D = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int d = 0;
        while (std::getline(ss, cell, ',')) {
            vals.push_back(std::stof(cell));
            ++d;
        }
        if (D < 0) D = d;
        else if (d != D) throw std::runtime_error("codebook_load_csv: ragged rows");
        ++K;
    }
    if (K < 2) throw ConfigError("codebook_load_csv: K must be >= 2");
    Codebook cb;
    cb.K = K;
    cb.D = D;
    cb.vectors = Tensor::from_data({K, D}, std::move(vals), true);
    return cb;
}

}  // namespace vqseg
