#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqseg/quantiser.hpp"
#include "vqseg/synthdata.hpp"
#include "vqseg/tensor.hpp"

namespace vqseg {

struct ModelConfig {
    int levels = 3;
    int base_channels = 8;
    int in_channels = 1;
    int num_classes = 3;
    bool skip_connections = true;
    bool vq_enabled = true;
    int K = 8;
    int D = 32;  // must equal bottleneck channel count when vq_enabled
    float beta = 0.25f;
    int groups = 4;
    uint64_t seed = 0;
    bool reseed_dead_codes = false;

    int bottleneck_channels() const { return base_channels << (levels - 1); }
};

struct Conv2dLayer {
    Tensor weight;  // [F,C,k,k]
    Tensor bias;    // [F]
    int stride = 1;
    int padding = 1;
};

struct GroupNormLayer {
    Tensor gamma, beta;  // [C]
    int groups = 1;
};

// pre-activation: GN -> Swish -> conv, twice, plus identity/1x1 shortcut
struct ResidualBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2;
    std::optional<Conv2dLayer> shortcut;  // present iff in_ch != out_ch
};

struct ForwardOutput {
    Tensor logits;
    std::optional<QuantOutput> quant;
    Tensor latent_pre;   // encoder output e
    Tensor latent_post;  // z_q, or e when vq disabled
};

struct Model {
    ModelConfig cfg;
    Conv2dLayer stem;
    std::vector<ResidualBlock> enc_blocks;  // one per level
    std::vector<Conv2dLayer> down_convs;    // levels-1
    std::vector<Conv2dLayer> up_convs;      // levels-1
    std::vector<ResidualBlock> dec_blocks;  // levels-1
    Conv2dLayer head;                       // 1x1 to num_classes
    Codebook codebook;                      // valid iff cfg.vq_enabled

    // stable name -> parameter mapping, insertion order fixed
    std::vector<std::pair<std::string, Tensor>> parameters() const;
};

Model build_model(const ModelConfig& config);

ForwardOutput forward(const Model& model, const Tensor& x);

// Encoder half only (Phi_e): input image -> pre-quantisation latent e.
Tensor encode(const Model& model, const Tensor& x);

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;  // decoupled
    int batch_size = 8;
    bool augment = true;
};

struct AdamState {
    std::map<std::string, std::vector<float>> m, v;
    int64_t step = 0;
};

struct EpochStats {
    double total_loss = 0.0;
    double dice_loss = 0.0;
    double ce_loss = 0.0;
    double codebook_loss = 0.0;
    double commitment_loss = 0.0;
    std::vector<int64_t> codebook_usage;  // K entries, empty when vq disabled
};

// One pass over the corpus; shuffling and augmentation draw from the model
// seed's named substreams keyed by `epoch`.
EpochStats train_epoch(Model& model, const Corpus& corpus, AdamState& state,
                       const AdamConfig& optimiser, int epoch);

// Mean Dice over the corpus (argmax prediction vs reference).
double evaluate_mean_dice(const Model& model, const Corpus& corpus);

SegMask argmax_mask(const Tensor& logits, int num_classes);

}  // namespace vqseg
