#include "vqseg/config.hpp"

#include <fstream>
#include <sstream>

namespace vqseg {

namespace {

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("expected boolean, got '" + v + "'");
}

std::vector<float> parse_float_list(const std::string& v) {
    std::vector<float> out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stof(cell));
    if (out.empty()) throw ConfigError("empty list");
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    try {
        if (key == "seed") {
            seed = std::stoull(value);
            model.seed = seed;
            corpus.seed = seed;
            perturb_seed = seed;
        } else if (key == "data_dir") data_dir = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "checkpoint") checkpoint = value;
        else if (key == "epochs") epochs = std::stoi(value);
        else if (key == "target_dice") target_dice = std::stod(value);
        else if (key == "model.levels") model.levels = std::stoi(value);
        else if (key == "model.base_channels") model.base_channels = std::stoi(value);
        else if (key == "model.in_channels") model.in_channels = std::stoi(value);
        else if (key == "model.num_classes") model.num_classes = std::stoi(value);
        else if (key == "model.skip_connections") model.skip_connections = parse_bool(value);
        else if (key == "model.vq_enabled") model.vq_enabled = parse_bool(value);
        else if (key == "model.K") model.K = std::stoi(value);
        else if (key == "model.D") model.D = std::stoi(value);
        else if (key == "model.beta") model.beta = std::stof(value);
        else if (key == "model.groups") model.groups = std::stoi(value);
        else if (key == "model.reseed_dead_codes") model.reseed_dead_codes = parse_bool(value);
        else if (key == "optim.lr") optim.lr = std::stof(value);
        else if (key == "optim.beta1") optim.beta1 = std::stof(value);
        else if (key == "optim.beta2") optim.beta2 = std::stof(value);
        else if (key == "optim.eps") optim.eps = std::stof(value);
        else if (key == "optim.weight_decay") optim.weight_decay = std::stof(value);
        else if (key == "optim.batch_size") optim.batch_size = std::stoi(value);
        else if (key == "optim.augment") optim.augment = parse_bool(value);
        else if (key == "corpus.n_train") corpus.n_train = std::stoi(value);
        else if (key == "corpus.n_val") corpus.n_val = std::stoi(value);
        else if (key == "corpus.n_test") corpus.n_test = std::stoi(value);
        else if (key == "corpus.image_size") corpus.image_size = std::stoi(value);
        else if (key == "corpus.num_classes") corpus.num_classes = std::stoi(value);
        else if (key == "corpus.domain") {
            if (value == "A") corpus.domain = Domain::A;
            else if (value == "B") corpus.domain = Domain::B;
            else throw ConfigError("corpus.domain must be A or B");
        } else if (key == "perturb.kind") perturb_kind = value;
        else if (key == "perturb.levels") perturb_levels = parse_float_list(value);
        else if (key == "perturb.seed") perturb_seed = std::stoull(value);
        else if (key == "study.draws") study_draws = std::stoi(value);
        else if (key == "study.images") study_images = std::stoi(value);
        else if (key == "metrics.spacing") metric_spacing = std::stod(value);
        else throw ConfigError("unknown configuration key '" + key + "'");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& ex) {
        throw ConfigError("bad value for '" + key + "': " + ex.what());
    }
}

RunConfig RunConfig::from_pairs(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    // seed first so later explicit sub-seeds still win
    if (auto it = kv.find("seed"); it != kv.end()) c.set("seed", it->second);
    for (const auto& [k, v] : kv)
        if (k != "seed") c.set(k, v);
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string s) {
            const auto b2 = s.find_first_not_of(" \t");
            const auto e2 = s.find_last_not_of(" \t");
            return b2 == std::string::npos ? std::string() : s.substr(b2, e2 - b2 + 1);
        };
        if (!kv.emplace(trim(key), trim(val)).second)
            throw ConfigError(path + ": duplicate key '" + trim(key) + "'");
    }
    return from_pairs(kv);
}

std::string RunConfig::resolved() const {
    std::stringstream s;
    s << "checkpoint=" << checkpoint << '\n';
    s << "corpus.domain=" << (corpus.domain == Domain::A ? "A" : "B") << '\n';
    s << "corpus.image_size=" << corpus.image_size << '\n';
    s << "corpus.n_test=" << corpus.n_test << '\n';
    s << "corpus.n_train=" << corpus.n_train << '\n';
    s << "corpus.n_val=" << corpus.n_val << '\n';
    s << "corpus.num_classes=" << corpus.num_classes << '\n';
    s << "data_dir=" << data_dir << '\n';
    s << "epochs=" << epochs << '\n';
    s << "metrics.spacing=" << metric_spacing << '\n';
    s << "model.D=" << model.D << '\n';
    s << "model.K=" << model.K << '\n';
    s << "model.base_channels=" << model.base_channels << '\n';
    s << "model.beta=" << model.beta << '\n';
    s << "model.groups=" << model.groups << '\n';
    s << "model.in_channels=" << model.in_channels << '\n';
    s << "model.levels=" << model.levels << '\n';
    s << "model.num_classes=" << model.num_classes << '\n';
    s << "model.reseed_dead_codes=" << (model.reseed_dead_codes ? "true" : "false") << '\n';
    s << "model.skip_connections=" << (model.skip_connections ? "true" : "false") << '\n';
    s << "model.vq_enabled=" << (model.vq_enabled ? "true" : "false") << '\n';
    s << "optim.augment=" << (optim.augment ? "true" : "false") << '\n';
    s << "optim.batch_size=" << optim.batch_size << '\n';
    s << "optim.beta1=" << optim.beta1 << '\n';
    s << "optim.beta2=" << optim.beta2 << '\n';
    s << "optim.eps=" << optim.eps << '\n';
    s << "optim.lr=" << optim.lr << '\n';
    s << "optim.weight_decay=" << optim.weight_decay << '\n';
    s << "out_dir=" << out_dir << '\n';
    s << "perturb.kind=" << perturb_kind << '\n';
    s << "perturb.levels=";
    for (size_t i = 0; i < perturb_levels.size(); ++i) s << (i ? "," : "") << perturb_levels[i];
    s << '\n';
    s << "perturb.seed=" << perturb_seed << '\n';
    s << "seed=" << seed << '\n';
    s << "study.draws=" << study_draws << '\n';
    s << "study.images=" << study_images << '\n';
    s << "target_dice=" << target_dice << '\n';
    return s.str();
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write resolved config to " + path);
    f << resolved();
}

std::string RunConfig::report_header() const {
    std::stringstream s;
    s << "# " << artifact_version() << " seed=" << seed << '\n';
    s << "# " << noise_calibration_string() << '\n';
    return s.str();
}

}  // namespace vqseg
