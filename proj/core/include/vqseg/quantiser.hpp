#pragma once

#include <vector>

#include "vqseg/tensor.hpp"

namespace vqseg {

// Discrete latent dictionary: K vectors of dimension D. The vector matrix is
// a trainable tensor; during evaluation it is frozen and shared read-only.
struct Codebook {
    int K = 0;
    int D = 0;
    bool unit_sphere = false;
    Tensor vectors;  // [K, D]
};

struct QuantOutput {
    Tensor z_q;               // same shape as encoder output
    std::vector<int> indices; // one per spatial row, values in [0, K)
    Tensor codebook_loss;     // scalar: mean over rows of ||sg(e) - l_z||^2
    Tensor commitment_loss;   // scalar: beta * mean over rows of ||e - sg(l_z)||^2
};

// Rows i.i.d. Gaussian with per-component std 1/sqrt(D); row-normalised when
// unit_sphere is set. Deterministic given seed.
Codebook codebook_init(int K, int D, uint64_t seed, bool unit_sphere);

// indices[m] = argmin_i ||e_rows[m] - l_i||_2, distances accumulated in
// double, ties broken toward the lowest index.
std::vector<int> nearest_assign(const std::vector<float>& e_rows, int M, int D,
                                const Codebook& codebook);
std::vector<int> nearest_assign(const Tensor& e_rows, const Codebook& codebook);

// Quantisation block: nearest assignment, straight-through z_q, and the two
// stop-gradient loss terms. Accepts [N,D,H,W] or row-major [M,D] input.
QuantOutput quantise(const Tensor& e, const Codebook& codebook, float beta);

// Codebook CSV: one row per vector, 9 significant digits.
void codebook_save_csv(const Codebook& cb, const std::string& path);
Codebook codebook_load_csv(const std::string& path);

}  // namespace vqseg
