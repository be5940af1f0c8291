#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vqseg/losses.hpp"
#include "vqseg/metrics.hpp"
#include "vqseg/segnet.hpp"

using namespace vqseg;

namespace {

ModelConfig desk_config(bool vq, bool skips = true, uint64_t seed = 1) {
    ModelConfig c;
    c.levels = 3;
    c.base_channels = 8;
    c.in_channels = 1;
    c.num_classes = 2;
    c.skip_connections = skips;
    c.vq_enabled = vq;
    c.K = 8;
    c.D = 32;
    c.groups = 4;
    c.seed = seed;
    return c;
}

Tensor random_image(Rng& rng, int n, int hw) {
    std::vector<float> v((size_t)n * hw * hw);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor::from_data({n, 1, hw, hw}, std::move(v));
}

Corpus one_sample_corpus(int hw) {
    CorpusSpec s;
    s.image_size = hw;
    s.seed = 5;
    Corpus c = generate_split(s, "train", 1);
    return c;
}

}  // namespace

TEST_CASE("bottleneck shape follows channel doubling and stride arithmetic") {
    ModelConfig c = desk_config(false);
    Model m = build_model(c);
    Rng rng(2);
    Tensor x = random_image(rng, 1, 32);
    ForwardOutput out = forward(m, x);
    CHECK(out.latent_pre.shape() == Shape{1, 32, 8, 8});
    CHECK(out.logits.shape() == Shape{1, 2, 32, 32});
}

TEST_CASE("vq disabled: latent passthrough") {
    Model m = build_model(desk_config(false));
    Rng rng(3);
    ForwardOutput out = forward(m, random_image(rng, 1, 32));
    CHECK(!out.quant.has_value());
    CHECK(out.latent_post.data() == out.latent_pre.data());
}

TEST_CASE("same seed gives bitwise identical weights and logits") {
    Model a = build_model(desk_config(true));
    Model b = build_model(desk_config(true));
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.data() == pb[i].second.data());

    Rng rng(4);
    Tensor x = random_image(rng, 2, 32);
    CHECK(forward(a, x).logits.data() == forward(a, x).logits.data());
    CHECK(forward(a, x).logits.data() == forward(b, x).logits.data());
}

TEST_CASE("zero final layer forces uniform softmax") {
    Model m = build_model(desk_config(false));
    std::fill(m.head.weight.mutable_data().begin(), m.head.weight.mutable_data().end(), 0.0f);
    std::fill(m.head.bias.mutable_data().begin(), m.head.bias.mutable_data().end(), 0.0f);
    Rng rng(5);
    ForwardOutput out = forward(m, random_image(rng, 1, 32));
    for (float v : out.logits.data()) CHECK(v == 0.0f);
    Tensor p = softmax_channels(out.logits);
    for (float v : p.data()) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("e rows on codebook rows make quantisation exact") {
    ModelConfig c = desk_config(true);
    c.K = 4;
    Model m = build_model(c);
    Rng rng(6);
    Tensor x = random_image(rng, 1, 32);
    // plant encoder outputs as codebook rows
    Tensor e = encode(m, x);
    Tensor rows = nchw_to_rows(e);
    const int D = rows.shape()[1];
    auto& cb = m.codebook.vectors.mutable_data();
    for (int k = 0; k < m.cfg.K; ++k)
        std::copy(rows.data().begin() + (size_t)k * D, rows.data().begin() + (size_t)(k + 1) * D,
                  cb.begin() + (size_t)k * D);
    // a fresh forward whose first 4 latent rows are exactly covered still
    // quantises those rows losslessly
    ForwardOutput out = forward(m, x);
    for (int r = 0; r < 4; ++r)
        for (int d = 0; d < D; ++d) {
            const int idx = out.quant->indices[r];
            CHECK(nchw_to_rows(out.latent_post).data()[r * D + d] ==
                  m.codebook.vectors.data()[idx * D + d]);
        }
}

TEST_CASE("config validation") {
    ModelConfig c = desk_config(true);
    c.D = 16;  // != bottleneck channels
    CHECK_THROWS_AS(build_model(c), ConfigError);
    c = desk_config(false);
    c.levels = 1;
    CHECK_THROWS_AS(build_model(c), ConfigError);
    Model m = build_model(desk_config(false));
    Rng rng(7);
    CHECK_THROWS_AS(forward(m, random_image(rng, 1, 30)), ConfigError);  // 30 % 4 != 0
}

TEST_CASE("assumption: latent grid strictly coarser than the input image") {
    Model m = build_model(desk_config(true));
    Rng rng(8);
    Tensor x = random_image(rng, 1, 32);
    Tensor e = encode(m, x);
    // each latent position summarises a 4x4 input patch: 8*8 < 32*32
    const int64_t latent_positions = e.shape()[2] * e.shape()[3];
    CHECK(latent_positions < x.shape()[2] * x.shape()[3]);
}

TEST_CASE("skips off + vq on: same code indices imply identical logits") {
    ModelConfig c = desk_config(true, /*skips=*/false);
    Model m = build_model(c);
    Rng rng(9);
    Tensor x = random_image(rng, 1, 32);
    ForwardOutput o1 = forward(m, x);

    bool tested = false;
    for (int attempt = 0; attempt < 20 && !tested; ++attempt) {
        std::vector<float> xv = x.data();
        Rng nrng(100 + attempt);
        for (auto& v : xv)
            v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(nrng.normal() * 1e-4)));
        ForwardOutput o2 = forward(m, Tensor::from_data(x.shape(), xv));
        if (o2.quant->indices == o1.quant->indices) {
            CHECK(o2.logits.data() == o1.logits.data());  // bitwise
            tested = true;
        }
    }
    CHECK(tested);
}

TEST_CASE("total loss equals the sum of its reported terms") {
    ModelConfig cfg = desk_config(true);
    cfg.num_classes = 3;
    Model m = build_model(cfg);
    Corpus c = one_sample_corpus(32);
    AdamState st;
    AdamConfig opt;
    opt.augment = false;
    EpochStats s = train_epoch(m, c, st, opt, 0);
    const double parts = s.dice_loss + s.ce_loss + s.codebook_loss + s.commitment_loss;
    CHECK(std::fabs(s.total_loss - parts) <= 1e-6);

    cfg.vq_enabled = false;
    cfg.D = cfg.base_channels * 4;
    Model plain = build_model(cfg);
    EpochStats sp = train_epoch(plain, c, st, opt, 0);
    CHECK(std::fabs(sp.total_loss - (sp.dice_loss + sp.ce_loss)) <= 1e-6);
    CHECK(sp.codebook_loss == 0.0);
    CHECK(sp.commitment_loss == 0.0);
}

TEST_CASE("learning rate zero freezes the model") {
    ModelConfig cfg = desk_config(true);
    cfg.num_classes = 3;
    Model m = build_model(cfg);
    Corpus c = one_sample_corpus(32);
    AdamState st;
    AdamConfig opt;
    opt.lr = 0.0f;
    opt.augment = false;
    auto before = m.parameters();
    std::vector<std::vector<float>> snap;
    for (auto& [n, p] : before) snap.push_back(p.data());
    EpochStats s1 = train_epoch(m, c, st, opt, 0);
    EpochStats s2 = train_epoch(m, c, st, opt, 1);
    auto after = m.parameters();
    for (size_t i = 0; i < after.size(); ++i) CHECK(after[i].second.data() == snap[i]);
    CHECK(s1.total_loss == doctest::Approx(s2.total_loss));
}

TEST_CASE("assigned codebook vectors move, unassigned stay put") {
    ModelConfig cfg = desk_config(true);
    cfg.num_classes = 3;
    cfg.K = 64;  // plenty of dead vectors on a one-sample corpus
    Model m = build_model(cfg);
    Corpus c = one_sample_corpus(32);
    AdamState st;
    AdamConfig opt;
    opt.augment = false;
    const std::vector<float> before = m.codebook.vectors.data();
    EpochStats s = train_epoch(m, c, st, opt, 0);
    const auto& after = m.codebook.vectors.data();
    const int D = cfg.D;
    for (int k = 0; k < cfg.K; ++k) {
        bool moved = false;
        for (int d = 0; d < D; ++d) moved = moved || before[k * D + d] != after[k * D + d];
        if (s.codebook_usage[k] > 0) CHECK(moved);
        else CHECK(!moved);
    }
}

TEST_CASE("overfitting a single sample reaches dice >= 0.99") {
    ModelConfig cfg = desk_config(true);
    cfg.num_classes = 3;
    Model m = build_model(cfg);
    Corpus c = one_sample_corpus(32);
    AdamState st;
    AdamConfig opt;
    opt.lr = 3e-3f;
    opt.augment = false;
    double dice = 0.0;
    for (int step = 0; step < 200; ++step) {
        train_epoch(m, c, st, opt, step);
        if (step % 25 == 24) {
            dice = evaluate_mean_dice(m, c);
            if (dice >= 0.99) break;
        }
    }
    dice = std::max(dice, evaluate_mean_dice(m, c));
    CHECK(dice >= 0.99);
}

TEST_CASE("empty corpus is rejected") {
    Model m = build_model(desk_config(false));
    Corpus empty;
    AdamState st;
    CHECK_THROWS_AS(train_epoch(m, empty, st, AdamConfig{}, 0), DataError);
}
