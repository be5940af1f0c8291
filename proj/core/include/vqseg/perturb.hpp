#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "vqseg/tensor.hpp"

namespace vqseg {

enum class NoiseKind { identity, gaussian, salt_pepper, poisson, domain_shift };

struct DomainParams {
    float gamma = 1.6f;
    float contrast = 0.8f;
    float bias_amp = 0.1f;
};

// Noise calibration convention (printed in every report header):
//   gaussian     additive N(0, level^2) per pixel
//   salt_pepper  a `level` fraction of pixels forced to 0 or 1
//   poisson      count scaling with relative std ~= level at mid-gray
//   domain_shift gamma/contrast/low-frequency bias field
struct PerturbationSpec {
    NoiseKind kind = NoiseKind::identity;
    float level = 0.0f;  // in [0,1]
    uint64_t seed = 0;
    std::optional<DomainParams> domain_params;

    static PerturbationSpec parse(const std::string& triple);  // kind:level:seed
    std::string to_string() const;
};

std::string noise_calibration_string();

// f(x): deterministic given (spec.seed, sample_index); output clamped to [0,1].
Tensor apply(const PerturbationSpec& spec, const Tensor& x, uint64_t sample_index = 0);

// delta(x) = f(x) - x, same seeding as apply.
Tensor delta(const PerturbationSpec& spec, const Tensor& x, uint64_t sample_index = 0);

}  // namespace vqseg
