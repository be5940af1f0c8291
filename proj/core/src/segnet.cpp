#include "vqseg/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vqseg/losses.hpp"
#include "vqseg/metrics.hpp"
#include "vqseg/rng.hpp"

namespace vqseg {

namespace {

Tensor he_init(Rng& rng, Shape shape, int fan_in) {
    std::vector<float> v(numel(shape));
    const double std = std::sqrt(2.0 / double(fan_in));
    for (auto& x : v) x = static_cast<float>(rng.normal() * std);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

Conv2dLayer make_conv(Rng& rng, int in_ch, int out_ch, int k, int stride, int padding) {
    Conv2dLayer c;
    c.weight = he_init(rng, {out_ch, in_ch, k, k}, in_ch * k * k);
    c.bias = Tensor::zeros({out_ch}, true);
    c.stride = stride;
    c.padding = padding;
    return c;
}

GroupNormLayer make_gn(int ch, int groups) {
    GroupNormLayer g;
    g.gamma = Tensor::full({ch}, 1.0f, true);
    g.beta = Tensor::zeros({ch}, true);
    g.groups = groups;
    return g;
}

ResidualBlock make_block(Rng& rng, int in_ch, int out_ch, int groups) {
    ResidualBlock b;
    b.gn1 = make_gn(in_ch, groups);
    b.conv1 = make_conv(rng, in_ch, out_ch, 3, 1, 1);
    b.gn2 = make_gn(out_ch, groups);
    b.conv2 = make_conv(rng, out_ch, out_ch, 3, 1, 1);
    if (in_ch != out_ch) b.shortcut = make_conv(rng, in_ch, out_ch, 1, 1, 0);
    return b;
}

Tensor apply_conv(const Conv2dLayer& c, const Tensor& x) {
    return add_channel_bias(conv2d(x, c.weight, c.stride, c.padding), c.bias);
}

Tensor apply_block(const ResidualBlock& b, const Tensor& x) {
    Tensor h = apply_conv(b.conv1, swish(group_norm(x, b.gn1.groups, b.gn1.gamma, b.gn1.beta, 1e-5f)));
    h = apply_conv(b.conv2, swish(group_norm(h, b.gn2.groups, b.gn2.gamma, b.gn2.beta, 1e-5f)));
    Tensor res = b.shortcut ? apply_conv(*b.shortcut, x) : x;
    return add(h, res);
}

void add_conv_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                     const Conv2dLayer& c) {
    out.emplace_back(name + ".weight", c.weight);
    out.emplace_back(name + ".bias", c.bias);
}

void add_block_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                      const ResidualBlock& b) {
    out.emplace_back(name + ".gn1.gamma", b.gn1.gamma);
    out.emplace_back(name + ".gn1.beta", b.gn1.beta);
    add_conv_params(out, name + ".conv1", b.conv1);
    out.emplace_back(name + ".gn2.gamma", b.gn2.gamma);
    out.emplace_back(name + ".gn2.beta", b.gn2.beta);
    add_conv_params(out, name + ".conv2", b.conv2);
    if (b.shortcut) add_conv_params(out, name + ".shortcut", *b.shortcut);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Model::parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    add_conv_params(out, "stem", stem);
    for (size_t i = 0; i < enc_blocks.size(); ++i)
        add_block_params(out, "enc" + std::to_string(i), enc_blocks[i]);
    for (size_t i = 0; i < down_convs.size(); ++i)
        add_conv_params(out, "down" + std::to_string(i), down_convs[i]);
    for (size_t i = 0; i < up_convs.size(); ++i)
        add_conv_params(out, "up" + std::to_string(i), up_convs[i]);
    for (size_t i = 0; i < dec_blocks.size(); ++i)
        add_block_params(out, "dec" + std::to_string(i), dec_blocks[i]);
    add_conv_params(out, "head", head);
    if (cfg.vq_enabled) out.emplace_back("codebook", codebook.vectors);
    return out;
}

Model build_model(const ModelConfig& config) {
    if (config.levels < 2) throw ConfigError("build_model: levels must be >= 2");
    if (config.base_channels % config.groups != 0)
        throw ConfigError("build_model: base_channels not divisible by groups");
    if (config.vq_enabled && config.D != config.bottleneck_channels())
        throw ConfigError("build_model: D must equal bottleneck channel count");

    Model m;
    m.cfg = config;
    Rng rng(substream_seed(config.seed, "weights"));

    const int L = config.levels;
    auto ch = [&](int l) { return config.base_channels << l; };

    m.stem = make_conv(rng, config.in_channels, ch(0), 3, 1, 1);
    for (int l = 0; l < L; ++l) m.enc_blocks.push_back(make_block(rng, ch(l), ch(l), config.groups));
    for (int l = 0; l < L - 1; ++l)
        m.down_convs.push_back(make_conv(rng, ch(l), ch(l + 1), 3, 2, 1));
    for (int l = L - 1; l >= 1; --l) {
        m.up_convs.push_back(make_conv(rng, ch(l), ch(l - 1), 3, 1, 1));
        const int in_ch = config.skip_connections ? 2 * ch(l - 1) : ch(l - 1);
        m.dec_blocks.push_back(make_block(rng, in_ch, ch(l - 1), config.groups));
    }
    m.head = make_conv(rng, ch(0), config.num_classes, 1, 1, 0);

    if (config.vq_enabled)
        m.codebook = codebook_init(config.K, config.D, substream_seed(config.seed, "codebook-seed"),
                                   false);
    return m;
}

Tensor encode(const Model& model, const Tensor& x) {
    const int L = model.cfg.levels;
    Tensor h = apply_conv(model.stem, x);
    for (int l = 0; l < L; ++l) {
        h = apply_block(model.enc_blocks[l], h);
        if (l < L - 1) h = apply_conv(model.down_convs[l], h);
    }
    return h;
}

ForwardOutput forward(const Model& model, const Tensor& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[1] != model.cfg.in_channels)
        throw DimensionError("forward: input must be [N,in_channels,H,W]");
    const int L = model.cfg.levels;
    if (xs[2] % (1 << (L - 1)) != 0 || xs[3] % (1 << (L - 1)) != 0)
        throw ConfigError("forward: spatial dims not divisible by 2^(levels-1)");

    std::vector<Tensor> skips;
    Tensor h = apply_conv(model.stem, x);
    for (int l = 0; l < L; ++l) {
        h = apply_block(model.enc_blocks[l], h);
        if (l < L - 1) {
            skips.push_back(h);
            h = apply_conv(model.down_convs[l], h);
        }
    }

    ForwardOutput out;
    out.latent_pre = h;
    if (model.cfg.vq_enabled) {
        out.quant = quantise(h, model.codebook, model.cfg.beta);
        out.latent_post = out.quant->z_q;
    } else {
        out.latent_post = h;
    }

    h = out.latent_post;
    for (int i = 0; i < L - 1; ++i) {
        h = apply_conv(model.up_convs[i], upsample_nearest2(h));
        if (model.cfg.skip_connections) h = concat_channels(h, skips[L - 2 - i]);
        h = apply_block(model.dec_blocks[i], h);
    }
    out.logits = apply_conv(model.head, h);
    return out;
}

SegMask argmax_mask(const Tensor& logits, int num_classes) {
    const auto& s = logits.shape();
    SegMask m;
    m.n = s[0];
    m.h = s[2];
    m.w = s[3];
    m.num_classes = num_classes;
    const int C = s[1];
    const int64_t HW = (int64_t)s[2] * s[3];
    m.labels.resize((size_t)m.n * HW);
    for (int n = 0; n < m.n; ++n)
        for (int64_t p = 0; p < HW; ++p) {
            int best = 0;
            float bv = logits.data()[((int64_t)n * C) * HW + p];
            for (int c = 1; c < C; ++c) {
                const float v = logits.data()[((int64_t)n * C + c) * HW + p];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m.labels[(size_t)n * HW + p] = static_cast<uint8_t>(best);
        }
    return m;
}

namespace {

struct Batch {
    Tensor images;  // [B,1,H,W]
    SegMask masks;
};

Batch assemble_batch(const Corpus& corpus, const std::vector<int>& idx, bool augment, Rng& rng) {
    const int B = static_cast<int>(idx.size());
    const int H = corpus.h, W = corpus.w;
    std::vector<float> img((size_t)B * H * W);
    Batch b;
    b.masks.n = B;
    b.masks.h = H;
    b.masks.w = W;
    b.masks.num_classes = corpus.num_classes;
    b.masks.labels.resize((size_t)B * H * W);
    for (int i = 0; i < B; ++i) {
        const auto& src_img = corpus.images[idx[i]];
        const auto& src_msk = corpus.masks[idx[i]];
        bool fliph = false, flipv = false;
        int dx = 0, dy = 0;
        if (augment) {
            fliph = rng.uniform() < 0.5;
            flipv = rng.uniform() < 0.5;
            const int max_shift = std::max(1, W / 10);
            dx = rng.uniform_int(2 * max_shift + 1) - max_shift;
            dy = rng.uniform_int(2 * max_shift + 1) - max_shift;
        }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int sy = flipv ? H - 1 - y : y;
                int sx = fliph ? W - 1 - x : x;
                sy -= dy;
                sx -= dx;
                float iv = 0.0f;
                uint8_t mv = 0;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                    iv = src_img[(size_t)sy * W + sx];
                    mv = src_msk[(size_t)sy * W + sx];
                }
                img[((size_t)i * H + y) * W + x] = iv;
                b.masks.labels[((size_t)i * H + y) * W + x] = mv;
            }
    }
    b.images = Tensor::from_data({B, 1, H, W}, std::move(img));
    return b;
}

void adam_step(Model& model, AdamState& state, const AdamConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(double(cfg.beta1), double(state.step));
    const double bc2 = 1.0 - std::pow(double(cfg.beta2), double(state.step));
    for (auto& [name, param] : model.parameters()) {
        auto node = param.node();
        if (node->grad.size() != node->data.size()) continue;  // untouched leaf
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != node->data.size()) m.assign(node->data.size(), 0.0f);
        if (v.size() != node->data.size()) v.assign(node->data.size(), 0.0f);
        // gamma/beta/bias are excluded from weight decay; so is the codebook,
        // whose only update path is the codebook loss term
        const bool decay = name.find("weight") != std::string::npos;
        for (size_t i = 0; i < node->data.size(); ++i) {
            const float g = node->grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g * g;
            const double mhat = double(m[i]) / bc1;
            const double vhat = double(v[i]) / bc2;
            double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (decay) upd += double(cfg.lr) * cfg.weight_decay * node->data[i];
            node->data[i] = static_cast<float>(node->data[i] - upd);
        }
    }
}

}  // namespace

EpochStats train_epoch(Model& model, const Corpus& corpus, AdamState& state,
                       const AdamConfig& optimiser, int epoch) {
    if (corpus.size() == 0) throw DataError("train_epoch: empty corpus");
    EpochStats stats;
    if (model.cfg.vq_enabled) stats.codebook_usage.assign(model.cfg.K, 0);

    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(substream_seed(model.cfg.seed, "data-order", epoch));
    for (int i = corpus.size() - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
    Rng aug_rng(substream_seed(model.cfg.seed, "augment", epoch));

    int n_batches = 0;
    for (int start = 0; start < corpus.size(); start += optimiser.batch_size) {
        const int end = std::min(start + optimiser.batch_size, corpus.size());
        std::vector<int> idx(order.begin() + start, order.begin() + end);
        Batch batch = assemble_batch(corpus, idx, optimiser.augment, aug_rng);

        for (auto& [name, p] : model.parameters()) p.zero_grad();

        ForwardOutput out = forward(model, batch.images);
        DiceCe seg = dice_ce_loss(out.logits, batch.masks);
        Tensor loss = add(seg.dice_loss, seg.ce_loss);
        if (model.cfg.vq_enabled) {
            loss = add(loss, add(out.quant->codebook_loss, out.quant->commitment_loss));
            for (int idx_q : out.quant->indices) ++stats.codebook_usage[idx_q];
            stats.codebook_loss += out.quant->codebook_loss.item();
            stats.commitment_loss += out.quant->commitment_loss.item();
        }
        if (!all_finite(loss))
            throw NumericalError("train_epoch: NaN loss; first non-finite op: " +
                                 first_nonfinite_op(loss));

        // reported total is the double sum of the reported terms
        stats.dice_loss += seg.dice_loss.item();
        stats.ce_loss += seg.ce_loss.item();
        stats.total_loss += double(seg.dice_loss.item()) + seg.ce_loss.item() +
                            (model.cfg.vq_enabled
                                 ? double(out.quant->codebook_loss.item()) +
                                       out.quant->commitment_loss.item()
                                 : 0.0);

        backward(loss);
        adam_step(model, state, optimiser);
        ++n_batches;
    }

    stats.total_loss /= n_batches;
    stats.dice_loss /= n_batches;
    stats.ce_loss /= n_batches;
    stats.codebook_loss /= n_batches;
    stats.commitment_loss /= n_batches;

    if (model.cfg.vq_enabled && model.cfg.reseed_dead_codes) {
        // move never-assigned vectors onto random encoder outputs so they can
        // re-enter competition; off by default since incomplete codebooks are
        // themselves a finding of interest
        Rng reseed_rng(substream_seed(model.cfg.seed, "reseed", epoch));
        std::vector<int> dead;
        for (int k = 0; k < model.cfg.K; ++k)
            if (stats.codebook_usage[k] == 0) dead.push_back(k);
        if (!dead.empty()) {
            const int i = reseed_rng.uniform_int(corpus.size());
            Tensor img = Tensor::from_data({1, 1, corpus.h, corpus.w}, corpus.images[i]);
            Tensor e = nchw_to_rows(encode(model, img));
            const int M = e.shape()[0], D = e.shape()[1];
            auto& cbdata = model.codebook.vectors.mutable_data();
            for (int k : dead) {
                const int row = reseed_rng.uniform_int(M);
                for (int d = 0; d < D; ++d) cbdata[(size_t)k * D + d] = e.data()[(size_t)row * D + d];
            }
        }
    }
    return stats;
}

double evaluate_mean_dice(const Model& model, const Corpus& corpus) {
    double acc = 0.0;
    for (int i = 0; i < corpus.size(); ++i) {
        Tensor img = Tensor::from_data({1, 1, corpus.h, corpus.w}, corpus.images[i]);
        ForwardOutput out = forward(model, img);
        SegMask pred = argmax_mask(out.logits, corpus.num_classes);
        SegMask ref = corpus.mask_at(i);
        MetricReport r = evaluate_sample(pred, ref);
        acc += r.mean_dice;
    }
    return acc / corpus.size();
}

}  // namespace vqseg
