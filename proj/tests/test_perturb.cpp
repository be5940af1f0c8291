#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vqseg/perturb.hpp"
#include "vqseg/rng.hpp"

using namespace vqseg;

namespace {

Tensor constant_image(int hw, float value) {
    return Tensor::from_data({1, 1, hw, hw}, std::vector<float>((size_t)hw * hw, value));
}

PerturbationSpec spec_of(NoiseKind kind, float level, uint64_t seed = 42) {
    PerturbationSpec s;
    s.kind = kind;
    s.level = level;
    s.seed = seed;
    return s;
}

double mean_abs_delta(NoiseKind kind, float level, uint64_t seed) {
    Tensor x = constant_image(64, 0.5f);
    PerturbationSpec s = spec_of(kind, level, seed);
    Tensor d = delta(s, x);
    double acc = 0;
    for (float v : d.data()) acc += std::fabs(v);
    return acc / d.size();
}

}  // namespace

TEST_CASE("level 0 is the identity for every kind, bitwise") {
    Tensor x = constant_image(16, 0.37f);
    for (NoiseKind k : {NoiseKind::identity, NoiseKind::gaussian, NoiseKind::salt_pepper,
                        NoiseKind::poisson, NoiseKind::domain_shift}) {
        Tensor y = apply(spec_of(k, 0.0f), x);
        CHECK(y.data() == x.data());
    }
}

TEST_CASE("gaussian level 0.10 empirical std on constant mid-gray") {
    Tensor x = constant_image(256, 0.5f);
    Tensor d = delta(spec_of(NoiseKind::gaussian, 0.10f), x);
    double m = 0, v = 0;
    for (float dv : d.data()) m += dv;
    m /= d.size();
    for (float dv : d.data()) v += (dv - m) * (dv - m);
    v /= d.size();
    CHECK(std::sqrt(v) == doctest::Approx(0.10).epsilon(0.05));
}

TEST_CASE("salt_pepper level 0.30 flips the expected pixel fraction") {
    Tensor x = constant_image(256, 0.5f);
    Tensor y = apply(spec_of(NoiseKind::salt_pepper, 0.30f), x);
    int64_t extreme = 0;
    for (float v : y.data())
        if (v == 0.0f || v == 1.0f) ++extreme;
    const double frac = double(extreme) / y.size();
    CHECK(frac == doctest::Approx(0.30).epsilon(0.034));
}

TEST_CASE("delta of identity spec is all zeros") {
    Tensor x = constant_image(8, 0.2f);
    PerturbationSpec s;  // identity
    Tensor d = delta(s, x);
    for (float v : d.data()) CHECK(v == 0.0f);
}

TEST_CASE("x + delta equals apply bitwise for the same seed") {
    Rng rng(5);
    std::vector<float> img(64 * 64);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    Tensor x = Tensor::from_data({1, 1, 64, 64}, img);
    for (NoiseKind k : {NoiseKind::gaussian, NoiseKind::salt_pepper, NoiseKind::poisson,
                        NoiseKind::domain_shift}) {
        PerturbationSpec s = spec_of(k, 0.2f, 9);
        Tensor a = apply(s, x, 3);
        Tensor d = delta(s, x, 3);
        for (int64_t i = 0; i < x.size(); ++i) CHECK(a.data()[i] == x.data()[i] + d.data()[i]);
    }
}

TEST_CASE("poisson mean |delta| near half-normal prediction at level 0.1") {
    // E|N(0, 0.1^2)| = 0.1 sqrt(2/pi)
    const double expected = 0.1 * std::sqrt(2.0 / M_PI);
    const double got = mean_abs_delta(NoiseKind::poisson, 0.1f, 4);
    CHECK(got == doctest::Approx(expected).epsilon(0.20));
}

TEST_CASE("determinism: (seed, sample index) fully determine the draw") {
    Tensor x = constant_image(32, 0.5f);
    PerturbationSpec s = spec_of(NoiseKind::gaussian, 0.15f, 77);
    CHECK(apply(s, x, 5).data() == apply(s, x, 5).data());
    CHECK(apply(s, x, 5).data() != apply(s, x, 6).data());
}

TEST_CASE("property: mean |delta| is non-decreasing in level") {
    for (NoiseKind k : {NoiseKind::gaussian, NoiseKind::salt_pepper, NoiseKind::poisson,
                        NoiseKind::domain_shift}) {
        for (uint64_t seed = 0; seed < 10; ++seed) {
            double prev = -1.0;
            for (float level : {0.0f, 0.05f, 0.1f, 0.2f, 0.3f}) {
                double m = 0.0;
                // average over a few draws to tame sampling noise
                for (int d = 0; d < 3; ++d) {
                    Tensor x = constant_image(48, 0.5f);
                    Tensor dd = delta(spec_of(k, level, seed), x, d);
                    double acc = 0;
                    for (float v : dd.data()) acc += std::fabs(v);
                    m += acc / dd.size();
                }
                m /= 3;
                CHECK(m >= prev - 0.01);
                prev = m;
            }
        }
    }
}

TEST_CASE("property: output stays in [0,1] for every kind and level") {
    Rng rng(6);
    std::vector<float> img(32 * 32);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    Tensor x = Tensor::from_data({1, 1, 32, 32}, img);
    for (NoiseKind k : {NoiseKind::gaussian, NoiseKind::salt_pepper, NoiseKind::poisson,
                        NoiseKind::domain_shift})
        for (float level : {0.1f, 0.3f, 0.7f, 1.0f}) {
            Tensor y = apply(spec_of(k, level), x);
            for (float v : y.data()) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
}

TEST_CASE("inputs outside [0,1] are rejected") {
    Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.5f, 1.5f});
    CHECK_THROWS_AS(apply(spec_of(NoiseKind::gaussian, 0.1f), x), ConfigError);
}

TEST_CASE("spec triple parsing round trip and validation") {
    PerturbationSpec s = PerturbationSpec::parse("gaussian:0.30:42");
    CHECK(s.kind == NoiseKind::gaussian);
    CHECK(s.level == doctest::Approx(0.30f));
    CHECK(s.seed == 42);
    CHECK_THROWS_AS(PerturbationSpec::parse("sparkle:0.1:1"), ConfigError);
    CHECK_THROWS_AS(PerturbationSpec::parse("gaussian:1.5:1"), ConfigError);
    CHECK_THROWS_AS(PerturbationSpec::parse("gaussian"), ConfigError);
}
