#include "vqseg/synthdata.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vqseg/rng.hpp"

namespace vqseg {

SegMask Corpus::mask_at(int i) const {
    SegMask m;
    m.labels = masks[i];
    m.n = 1;
    m.h = h;
    m.w = w;
    m.num_classes = num_classes;
    return m;
}

namespace {

struct Geometry {
    double cx, cy;      // ellipse center (pixels)
    double ax, ay;      // semi-axes
    double theta;       // rotation
    double bu, bv, br;  // blob center/radius in normalized ellipse coords
};

Geometry draw_geometry(Rng& rng, int size) {
    Geometry g;
    g.ax = rng.uniform(0.16, 0.30) * size;
    g.ay = rng.uniform(0.16, 0.30) * size;
    g.theta = rng.uniform(0.0, M_PI);
    const double margin = std::max(g.ax, g.ay) + 2.0;
    g.cx = rng.uniform(margin, size - margin);
    g.cy = rng.uniform(margin, size - margin);
    // blob strictly inside the ellipse: |offset| + radius <= 0.75 keeps at
    // least a one-pixel rim down to 32x32 images
    g.br = rng.uniform(0.25, 0.40);
    const double off = rng.uniform(0.0, 0.75 - g.br);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    g.bu = off * std::cos(ang);
    g.bv = off * std::sin(ang);
    return g;
}

void rasterize(const Geometry& g, int size, std::vector<uint8_t>& mask) {
    mask.assign((size_t)size * size, 0);
    const double ct = std::cos(g.theta), st = std::sin(g.theta);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - g.cx, dy = y + 0.5 - g.cy;
            const double u = (dx * ct + dy * st) / g.ax;
            const double v = (-dx * st + dy * ct) / g.ay;
            if (u * u + v * v <= 1.0) {
                const double du = u - g.bu, dv = v - g.bv;
                mask[(size_t)y * size + x] = (du * du + dv * dv <= g.br * g.br) ? 2 : 1;
            }
        }
}

float clamp01(double v) { return v < 0.0 ? 0.0f : (v > 1.0 ? 1.0f : static_cast<float>(v)); }

void render_image(const Geometry& g, const std::vector<uint8_t>& mask, int size, Domain domain,
                  Rng& tex_rng, Rng& bias_rng, std::vector<float>& img) {
    (void)g;
    img.resize((size_t)size * size);
    // base appearance + fine texture, shared by both domains
    for (size_t i = 0; i < img.size(); ++i) {
        double base = 0.30;
        if (mask[i] == 1) base = 0.65;
        else if (mask[i] == 2) base = 0.88;
        img[i] = clamp01(base + tex_rng.normal() * 0.02);
    }
    if (domain == Domain::B) {
        // appearance shift: gamma 1.6, contrast 0.8, low-frequency bias field
        struct Wave {
            double fx, fy, ph;
        } waves[3];
        for (auto& wv : waves) {
            wv.fx = bias_rng.uniform(0.5, 1.5);
            wv.fy = bias_rng.uniform(0.5, 1.5);
            wv.ph = bias_rng.uniform(0.0, 2.0 * M_PI);
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const size_t i = (size_t)y * size + x;
                double bias = 0.0;
                for (const auto& wv : waves)
                    bias += (0.08 / 3.0) *
                            std::sin(2.0 * M_PI * (wv.fx * x / size + wv.fy * y / size) + wv.ph);
                const double gm = std::pow(double(img[i]), 1.6);
                img[i] = clamp01(0.8 * (gm - 0.5) + 0.5 + bias);
            }
    }
}

}  // namespace

Corpus generate_split(const CorpusSpec& spec, const std::string& split, int count) {
    if (count < 1) throw ConfigError("generate_split: count must be >= 1");
    if (spec.image_size < 8 || (spec.image_size & (spec.image_size - 1)) != 0)
        throw ConfigError("generate_split: image_size must be a power of two >= 8");
    Corpus c;
    c.h = c.w = spec.image_size;
    c.num_classes = spec.num_classes;
    const int size = spec.image_size;
    const double total = double(size) * size;

    for (int i = 0; i < count; ++i) {
        // geometry is domain-independent; appearance streams are per sample
        std::vector<uint8_t> mask;
        Geometry g{};
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            Rng geom_rng(substream_seed(spec.seed, "geom-" + split, (uint64_t)i * 100 + attempt));
            g = draw_geometry(geom_rng, size);
            rasterize(g, size, mask);
            int64_t fg = 0, blob = 0;
            for (uint8_t m : mask) {
                if (m) ++fg;
                if (m == 2) ++blob;
            }
            const double frac = double(fg) / total;
            ok = frac >= 0.05 && frac <= 0.5 && blob > 0;
        }
        if (!ok) throw DataError("generate_split: could not satisfy sample invariants");

        Rng tex_rng(substream_seed(spec.seed, "texture-" + split, i));
        Rng bias_rng(substream_seed(spec.seed, "bias-" + split, i));
        std::vector<float> img;
        render_image(g, mask, size, spec.domain, tex_rng, bias_rng, img);
        c.images.push_back(std::move(img));
        c.masks.push_back(std::move(mask));
    }
    return c;
}

void generate_corpus(const CorpusSpec& spec, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_vqds(generate_split(spec, "train", spec.n_train), out_dir + "/train.vqds");
    write_vqds(generate_split(spec, "val", spec.n_val), out_dir + "/val.vqds");
    write_vqds(generate_split(spec, "test", spec.n_test), out_dir + "/test.vqds");
}

namespace {

void put_u16(std::ofstream& f, uint16_t v) {
    const uint8_t b[2] = {uint8_t(v & 0xff), uint8_t(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

uint16_t get_u16(std::ifstream& f) {
    uint8_t b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    return uint16_t(b[0]) | (uint16_t(b[1]) << 8);
}

}  // namespace

void write_vqds(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_vqds: cannot open " + path);
    f.write("VQDS", 4);
    const uint8_t version = 1, classes = static_cast<uint8_t>(corpus.num_classes);
    f.write(reinterpret_cast<const char*>(&version), 1);
    f.write(reinterpret_cast<const char*>(&classes), 1);
    put_u16(f, static_cast<uint16_t>(corpus.size()));
    put_u16(f, static_cast<uint16_t>(corpus.h));
    put_u16(f, static_cast<uint16_t>(corpus.w));
    const char pad[4] = {0, 0, 0, 0};
    f.write(pad, 4);
    for (int i = 0; i < corpus.size(); ++i) {
        f.write(reinterpret_cast<const char*>(corpus.images[i].data()),
                (std::streamsize)corpus.images[i].size() * 4);
        f.write(reinterpret_cast<const char*>(corpus.masks[i].data()),
                (std::streamsize)corpus.masks[i].size());
    }
    if (!f) throw DataError("write_vqds: write failed for " + path);
}

Corpus read_vqds(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_vqds: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VQDS", 4) != 0)
        throw DataError("read_vqds: bad magic in " + path);
    uint8_t version, classes;
    f.read(reinterpret_cast<char*>(&version), 1);
    f.read(reinterpret_cast<char*>(&classes), 1);
    if (version != 1) throw DataError("read_vqds: unsupported version");
    const int count = get_u16(f);
    const int h = get_u16(f), w = get_u16(f);
    char pad[4];
    f.read(pad, 4);
    Corpus c;
    c.h = h;
    c.w = w;
    c.num_classes = classes;
    for (int i = 0; i < count; ++i) {
        std::vector<float> img((size_t)h * w);
        std::vector<uint8_t> mask((size_t)h * w);
        f.read(reinterpret_cast<char*>(img.data()), (std::streamsize)img.size() * 4);
        f.read(reinterpret_cast<char*>(mask.data()), (std::streamsize)mask.size());
        if (!f) throw DataError("read_vqds: truncated file " + path);
        c.images.push_back(std::move(img));
        c.masks.push_back(std::move(mask));
    }
    return c;
}

}  // namespace vqseg
