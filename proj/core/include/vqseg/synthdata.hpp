#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqseg/losses.hpp"

namespace vqseg {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Domain { A, B };

struct CorpusSpec {
    int n_train = 200;
    int n_val = 40;
    int n_test = 40;
    int image_size = 64;  // power of two
    int num_classes = 3;  // background, organ ellipse, lesion blob
    Domain domain = Domain::A;
    uint64_t seed = 0;
};

struct Corpus {
    int h = 0, w = 0;
    int num_classes = 0;
    std::vector<std::vector<float>> images;   // each [H*W], values in [0,1]
    std::vector<std::vector<uint8_t>> masks;  // each [H*W]

    int size() const { return static_cast<int>(images.size()); }
    SegMask mask_at(int i) const;
};

// One split, deterministic given (spec.seed, split name). Masks depend only
// on (seed, split, index), never on the domain, so cross-domain comparisons
// are over identical geometry.
Corpus generate_split(const CorpusSpec& spec, const std::string& split, int count);

// Writes train/val/test .vqds files under out_dir; byte-deterministic.
void generate_corpus(const CorpusSpec& spec, const std::string& out_dir);

// VQDS binary: 16-byte header (magic "VQDS", u8 version, u8 classes,
// u16 count, u16 H, u16 W, 4 reserved bytes; little-endian), then per sample
// H*W float32 image followed by H*W uint8 mask.
void write_vqds(const Corpus& corpus, const std::string& path);
Corpus read_vqds(const std::string& path);

}  // namespace vqseg
