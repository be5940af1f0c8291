#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vqseg/tensor.hpp"

namespace vqseg {

struct SegMask {
    std::vector<uint8_t> labels;  // [N,H,W] row-major
    int n = 0, h = 0, w = 0;
    int num_classes = 0;

    int64_t size() const { return (int64_t)n * h * w; }
};

struct DiceCe {
    Tensor dice_loss;
    Tensor ce_loss;
};

// Soft Dice (smoothing eps = 1e-5) + pixelwise cross entropy, both
// differentiable through the logits.
DiceCe dice_ce_loss(const Tensor& logits, const SegMask& target);

}  // namespace vqseg
