#pragma once

#include <map>
#include <string>
#include <vector>

#include "vqseg/perturb.hpp"
#include "vqseg/segnet.hpp"
#include "vqseg/synthdata.hpp"

namespace vqseg {

inline const char* artifact_version() { return "vqseg-0.1.0"; }

// Plain key=value run configuration. Unknown keys are rejected; every run
// writes a resolved copy of the effective configuration next to its outputs.
struct RunConfig {
    uint64_t seed = 0;
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string checkpoint;
    int epochs = 200;
    double target_dice = 0.0;  // early stop when > 0

    ModelConfig model;
    AdamConfig optim;
    CorpusSpec corpus;

    std::string perturb_kind = "gaussian";
    std::vector<float> perturb_levels{0.0f, 0.01f, 0.10f, 0.20f, 0.30f};
    uint64_t perturb_seed = 0;
    int study_draws = 100;
    int study_images = 8;
    double metric_spacing = 1.0;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_pairs(const std::map<std::string, std::string>& kv);
    void set(const std::string& key, const std::string& value);
    std::string resolved() const;  // key=value dump, sorted keys
    void write_resolved(const std::string& path) const;
    std::string report_header() const;  // version + seed + noise calibration
};

}  // namespace vqseg
