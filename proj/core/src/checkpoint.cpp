#include "vqseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vqseg {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
    uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

TableEntry f32_entry(std::string name, std::vector<int> dims, std::vector<float> data) {
    TableEntry e;
    e.name = std::move(name);
    e.dtype = 0;
    e.dims = std::move(dims);
    e.f32 = std::move(data);
    return e;
}

TableEntry i64_entry(std::string name, std::vector<int64_t> data) {
    TableEntry e;
    e.name = std::move(name);
    e.dtype = 1;
    e.dims = {static_cast<int>(data.size())};
    e.i64 = std::move(data);
    return e;
}

}  // namespace

void write_table(const std::vector<TableEntry>& entries, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_table: cannot open " + path);
    f.write("VQSG", 4);
    put_u32(f, kVersion);
    put_u32(f, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(f, static_cast<uint32_t>(e.name.size()));
        f.write(e.name.data(), (std::streamsize)e.name.size());
        f.write(reinterpret_cast<const char*>(&e.dtype), 1);
        put_u32(f, static_cast<uint32_t>(e.dims.size()));
        for (int d : e.dims) put_u32(f, static_cast<uint32_t>(d));
        if (e.dtype == 0)
            f.write(reinterpret_cast<const char*>(e.f32.data()), (std::streamsize)e.f32.size() * 4);
        else
            f.write(reinterpret_cast<const char*>(e.i64.data()), (std::streamsize)e.i64.size() * 8);
    }
    if (!f) throw FormatError("write_table: write failed for " + path);
}

std::vector<TableEntry> read_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_table: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VQSG", 4) != 0) throw FormatError("read_table: bad magic");
    if (get_u32(f) != kVersion) throw FormatError("read_table: unsupported version");
    const uint32_t count = get_u32(f);
    std::vector<TableEntry> out(count);
    for (auto& e : out) {
        const uint32_t nlen = get_u32(f);
        e.name.resize(nlen);
        f.read(e.name.data(), nlen);
        f.read(reinterpret_cast<char*>(&e.dtype), 1);
        const uint32_t rank = get_u32(f);
        e.dims.resize(rank);
        int64_t n = 1;
        for (auto& d : e.dims) {
            d = static_cast<int>(get_u32(f));
            n *= d;
        }
        if (e.dtype == 0) {
            e.f32.resize(n);
            f.read(reinterpret_cast<char*>(e.f32.data()), n * 4);
        } else if (e.dtype == 1) {
            e.i64.resize(n);
            f.read(reinterpret_cast<char*>(e.i64.data()), n * 8);
        } else {
            throw FormatError("read_table: unknown dtype");
        }
        if (!f) throw FormatError("read_table: truncated file");
    }
    return out;
}

void save_checkpoint(const Model& model, const AdamState& adam, int epoch,
                     const std::string& path) {
    std::vector<TableEntry> t;
    const auto& c = model.cfg;
    t.push_back(i64_entry("config.int",
                          {c.levels, c.base_channels, c.in_channels, c.num_classes,
                           c.skip_connections ? 1 : 0, c.vq_enabled ? 1 : 0, c.K, c.D, c.groups,
                           static_cast<int64_t>(c.seed), c.reseed_dead_codes ? 1 : 0}));
    t.push_back(f32_entry("config.beta", {1}, {c.beta}));
    t.push_back(i64_entry("state.counters", {adam.step, epoch}));

    for (const auto& [name, p] : model.parameters())
        t.push_back(f32_entry("param." + name, p.shape(), p.data()));
    for (const auto& [name, m] : adam.m)
        t.push_back(f32_entry("adam.m." + name, {static_cast<int>(m.size())}, m));
    for (const auto& [name, v] : adam.v)
        t.push_back(f32_entry("adam.v." + name, {static_cast<int>(v.size())}, v));
    write_table(t, path);
}

CheckpointState load_checkpoint(const std::string& path) {
    auto t = read_table(path);
    auto find = [&](const std::string& name) -> const TableEntry* {
        for (const auto& e : t)
            if (e.name == name) return &e;
        return nullptr;
    };
    const TableEntry* ci = find("config.int");
    const TableEntry* cb = find("config.beta");
    const TableEntry* sc = find("state.counters");
    if (!ci || !cb || !sc || ci->i64.size() != 11)
        throw FormatError("load_checkpoint: missing or malformed config entries");

    ModelConfig cfg;
    cfg.levels = static_cast<int>(ci->i64[0]);
    cfg.base_channels = static_cast<int>(ci->i64[1]);
    cfg.in_channels = static_cast<int>(ci->i64[2]);
    cfg.num_classes = static_cast<int>(ci->i64[3]);
    cfg.skip_connections = ci->i64[4] != 0;
    cfg.vq_enabled = ci->i64[5] != 0;
    cfg.K = static_cast<int>(ci->i64[6]);
    cfg.D = static_cast<int>(ci->i64[7]);
    cfg.groups = static_cast<int>(ci->i64[8]);
    cfg.seed = static_cast<uint64_t>(ci->i64[9]);
    cfg.reseed_dead_codes = ci->i64[10] != 0;
    cfg.beta = cb->f32[0];

    CheckpointState st;
    st.model = build_model(cfg);
    st.adam.step = sc->i64[0];
    st.epoch = static_cast<int>(sc->i64[1]);

    for (auto& [name, p] : st.model.parameters()) {
        const TableEntry* e = find("param." + name);
        if (!e || e->f32.size() != p.data().size())
            throw FormatError("load_checkpoint: missing parameter " + name);
        p.mutable_data() = e->f32;
    }
    for (const auto& e : t) {
        if (e.name.rfind("adam.m.", 0) == 0) st.adam.m[e.name.substr(7)] = e.f32;
        else if (e.name.rfind("adam.v.", 0) == 0) st.adam.v[e.name.substr(7)] = e.f32;
    }
    return st;
}

}  // namespace vqseg
