#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vqseg/losses.hpp"

namespace vqseg {

struct EmptyClassError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MetricReport {
    std::vector<double> per_class_dice;
    double mean_dice = 0.0;  // over classes present in ground truth
    double hd95 = 0.0;       // pixels (optionally scaled by spacing)
    double asd = 0.0;
};

// Hard Dice 2|P∩Q|/(|P|+|Q|) per class; a class absent in both masks scores 1.
std::vector<double> dice_score(const SegMask& pred, const SegMask& target);

// Pooled bidirectional boundary distances between the two masks of class_id.
// Boundary = foreground pixel with a background 4-neighbour; directed
// distances via exact Euclidean distance transform. Throws EmptyClassError
// when the class is absent in both masks. `spacing` scales pixel units.
std::pair<double, double> surface_distances(const SegMask& pred, const SegMask& target,
                                            int class_id, double spacing = 1.0);

// hd95/asd averaged over foreground classes present in either mask.
MetricReport evaluate_sample(const SegMask& pred, const SegMask& target, double spacing = 1.0);

// 95th percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

// Exact squared Euclidean distance transform of a binary image (distance to
// the nearest set pixel); two-pass lower-envelope algorithm.
std::vector<double> distance_transform(const std::vector<uint8_t>& binary, int h, int w);

}  // namespace vqseg
