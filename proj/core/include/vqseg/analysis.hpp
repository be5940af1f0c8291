#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vqseg/perturb.hpp"
#include "vqseg/quantiser.hpp"
#include "vqseg/segnet.hpp"

namespace vqseg {

struct CodebookStats {
    double r_mean = 0.0;        // sum of half nearest-neighbour distances / (K-1)
    double r_mean_over_k = 0.0; // same sum / K, reported alongside
    double r_std = 0.0;         // std of the half distances
    std::vector<double> r_i;    // full nearest-neighbour distance per vector
    std::vector<int64_t> usage_histogram;
    double perplexity = 0.0;
};

struct LatentVarianceReport {
    std::string tag;  // "vq-pre", "vq-post", "baseline"
    float level = 0.0f;
    int images = 0;
    int features = 0;
    std::vector<double> variance_matrix;  // images x features, row-major
    double mean_variance = 0.0;
};

struct BoundCheckRecord {
    double jvp_norm = 0.0;       // max over latent rows of the directional-derivative norm
    double r_i_assigned = 0.0;   // min over rows of r_i of the assigned vector
    bool codes_changed = false;
    double taylor_residual = 0.0;
    bool within_half_r = false;  // measured shift < r_i/2 for every row
    double max_shift = 0.0;      // max per-row latent shift at full perturbation
};

// Nearest-neighbour geometry of the codebook. r_i is the full distance to the
// nearest neighbour; the scalar summary uses half distances with both the
// (K-1) divisor and the mean-over-K variant reported.
CodebookStats compute_r(const Codebook& codebook);

// exp(entropy) of a usage histogram: K for uniform use, 1 for collapse.
double usage_perplexity(const std::vector<int64_t>& histogram);

// Assignment counts over the corpus and exp(entropy) of the normalised usage.
void codebook_usage(const Model& model, const Corpus& corpus, std::vector<int64_t>& histogram,
                    double& perplexity);

enum class LatentTap { vq_pre, vq_post, baseline };

LatentVarianceReport latent_variance_study(const Model& model, const Corpus& images,
                                           int image_count, const PerturbationSpec& spec,
                                           LatentTap tap, int draws = 100);

// Variance heatmap as plain PGM (P2 ASCII, row-major, value = clamped scaled
// variance), rows = images, columns = a feature subset.
void write_variance_pgm(const LatentVarianceReport& report, const std::string& path,
                        int max_features = 256);

// Generic encoder signature: image tensor -> latent rows [M,D].
using EncoderFn = std::function<Tensor(const Tensor&)>;

// Finite-difference surrogate for the directional derivative of the encoder
// along delta(x), compared against the codebook's per-vector radius.
BoundCheckRecord bound_check(const EncoderFn& encoder, const Codebook& codebook, const Tensor& x,
                             const PerturbationSpec& spec, double h, uint64_t sample_index = 0);

BoundCheckRecord bound_check(const Model& model, const Tensor& x, const PerturbationSpec& spec,
                             double h, uint64_t sample_index = 0);

}  // namespace vqseg
