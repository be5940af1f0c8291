#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vqseg/synthdata.hpp"

using namespace vqseg;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

CorpusSpec small_spec(Domain d = Domain::A, uint64_t seed = 3) {
    CorpusSpec s;
    s.n_train = 8;
    s.n_val = 4;
    s.n_test = 4;
    s.image_size = 32;
    s.domain = d;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("corpus generation is byte-deterministic") {
    const std::string d1 = "/tmp/vqds_a", d2 = "/tmp/vqds_b";
    generate_corpus(small_spec(), d1);
    generate_corpus(small_spec(), d2);
    for (const char* split : {"train", "val", "test"})
        CHECK(slurp(d1 + "/" + split + ".vqds") == slurp(d2 + "/" + split + ".vqds"));
}

TEST_CASE("foreground fraction and class presence invariants") {
    Corpus c = generate_split(small_spec(), "train", 200);
    for (int i = 0; i < c.size(); ++i) {
        int64_t fg = 0, organ = 0, blob = 0;
        for (uint8_t m : c.masks[i]) {
            if (m) ++fg;
            if (m == 1) ++organ;
            if (m == 2) ++blob;
        }
        const double frac = double(fg) / double(c.h * c.w);
        CHECK(frac >= 0.05);
        CHECK(frac <= 0.5);
        CHECK(organ > 0);
        CHECK(blob > 0);
    }
}

TEST_CASE("lesion blob is strictly inside the organ ellipse") {
    Corpus c = generate_split(small_spec(Domain::A, 17), "train", 50);
    for (int i = 0; i < c.size(); ++i) {
        // every blob pixel's 4-neighbours are organ or blob, never background
        for (int y = 0; y < c.h; ++y)
            for (int x = 0; x < c.w; ++x) {
                if (c.masks[i][y * c.w + x] != 2) continue;
                for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                    const int ny = y + dy, nx = x + dx;
                    REQUIRE(ny >= 0);
                    REQUIRE(ny < c.h);
                    REQUIRE(nx >= 0);
                    REQUIRE(nx < c.w);
                    CHECK(c.masks[i][ny * c.w + nx] != 0);
                }
            }
    }
}

TEST_CASE("domain B shares masks with domain A but changes appearance") {
    Corpus a = generate_split(small_spec(Domain::A, 9), "val", 6);
    Corpus b = generate_split(small_spec(Domain::B, 9), "val", 6);
    for (int i = 0; i < a.size(); ++i) {
        CHECK(a.masks[i] == b.masks[i]);
        CHECK(a.images[i] != b.images[i]);
    }
}

TEST_CASE("images stay in [0,1]") {
    for (Domain d : {Domain::A, Domain::B}) {
        Corpus c = generate_split(small_spec(d, 21), "train", 20);
        for (const auto& img : c.images)
            for (float v : img) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
    }
}

TEST_CASE("VQDS round trip preserves every byte of content") {
    Corpus c = generate_split(small_spec(), "test", 5);
    write_vqds(c, "/tmp/roundtrip.vqds");
    Corpus back = read_vqds("/tmp/roundtrip.vqds");
    CHECK(back.h == c.h);
    CHECK(back.w == c.w);
    CHECK(back.num_classes == c.num_classes);
    REQUIRE(back.size() == c.size());
    for (int i = 0; i < c.size(); ++i) {
        CHECK(back.images[i] == c.images[i]);
        CHECK(back.masks[i] == c.masks[i]);
    }
    // second write is byte-identical
    write_vqds(back, "/tmp/roundtrip2.vqds");
    CHECK(slurp("/tmp/roundtrip.vqds") == slurp("/tmp/roundtrip2.vqds"));
}

TEST_CASE("VQDS rejects bad magic and truncation") {
    {
        std::ofstream f("/tmp/bad.vqds", std::ios::binary);
        f << "NOPExxxxxxxxxxxxxxxx";
    }
    CHECK_THROWS_AS(read_vqds("/tmp/bad.vqds"), DataError);
    CHECK_THROWS_AS(read_vqds("/tmp/does_not_exist.vqds"), DataError);

    auto full = slurp("/tmp/roundtrip.vqds");
    {
        std::ofstream f("/tmp/trunc.vqds", std::ios::binary);
        f.write(full.data(), (std::streamsize)full.size() / 2);
    }
    CHECK_THROWS_AS(read_vqds("/tmp/trunc.vqds"), DataError);
}

TEST_CASE("invalid corpus specs are rejected") {
    CorpusSpec s = small_spec();
    s.image_size = 48;  // not a power of two
    CHECK_THROWS_AS(generate_split(s, "train", 4), ConfigError);
    CHECK_THROWS_AS(generate_split(small_spec(), "train", 0), ConfigError);
}
