#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vqseg/analysis.hpp"
#include "vqseg/checkpoint.hpp"
#include "vqseg/config.hpp"
#include "vqseg/metrics.hpp"

namespace fs = std::filesystem;
using namespace vqseg;

namespace {

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + ov + "'");
        cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    return cfg;
}

void prepare_out(const RunConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.out_dir);
    cfg.write_resolved(cfg.out_dir + "/resolved_config_" + command + ".txt");
}

Corpus load_split(const RunConfig& cfg, const std::string& split) {
    return read_vqds(cfg.data_dir + "/" + split + ".vqds");
}

std::ofstream open_report(const RunConfig& cfg, const std::string& name) {
    std::ofstream f(cfg.out_dir + "/" + name);
    if (!f) throw DataError("cannot open report file " + cfg.out_dir + "/" + name);
    f << cfg.report_header();
    return f;
}

int cmd_gen_data(const RunConfig& cfg) {
    prepare_out(cfg, "gen-data");
    generate_corpus(cfg.corpus, cfg.data_dir);
    std::cout << "wrote train/val/test .vqds to " << cfg.data_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    prepare_out(cfg, "train");
    Corpus train = load_split(cfg, "train");
    Corpus val = load_split(cfg, "val");

    Model model = build_model(cfg.model);
    AdamState adam;
    auto log = open_report(cfg, "train_log.csv");
    log << "epoch,total_loss,dice_loss,ce_loss,codebook_loss,commitment_loss,val_dice\n";

    int completed = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochStats s = train_epoch(model, train, adam, cfg.optim, epoch);
        completed = epoch + 1;
        const double vd = evaluate_mean_dice(model, val);
        log << epoch << ',' << s.total_loss << ',' << s.dice_loss << ',' << s.ce_loss << ','
            << s.codebook_loss << ',' << s.commitment_loss << ',' << vd << '\n';
        std::cout << "epoch " << epoch << " loss " << s.total_loss << " val_dice " << vd << "\n";
        if (cfg.target_dice > 0.0 && vd >= cfg.target_dice) {
            std::cout << "target dice reached, stopping early\n";
            break;
        }
    }
    save_checkpoint(model, adam, completed, cfg.out_dir + "/model.vqsg");
    std::cout << "checkpoint: " << cfg.out_dir << "/model.vqsg\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& split) {
    prepare_out(cfg, "eval");
    Corpus data = load_split(cfg, split);
    CheckpointState st = load_checkpoint(cfg.checkpoint);

    auto f = open_report(cfg, "metrics_" + split + ".csv");
    f << "sample_id,class,dice,hd95,asd\n";
    double acc = 0.0;
    for (int i = 0; i < data.size(); ++i) {
        Tensor img = Tensor::from_data({1, 1, data.h, data.w}, data.images[i]);
        ForwardOutput out = forward(st.model, img);
        SegMask pred = argmax_mask(out.logits, data.num_classes);
        SegMask ref = data.mask_at(i);
        auto dice = dice_score(pred, ref);
        for (int c = 0; c < data.num_classes; ++c) {
            double hd = 0.0, asd = 0.0;
            bool have_sd = false;
            if (c > 0) {
                try {
                    std::tie(hd, asd) = surface_distances(pred, ref, c, cfg.metric_spacing);
                    have_sd = true;
                } catch (const EmptyClassError&) {
                }
            }
            f << i << ',' << c << ',' << dice[c] << ',';
            if (have_sd) f << hd << ',' << asd << '\n';
            else f << "na,na\n";
        }
        acc += evaluate_sample(pred, ref, cfg.metric_spacing).mean_dice;
    }
    std::cout << "mean dice (" << split << "): " << acc / data.size() << "\n";
    return 0;
}

int cmd_perturb_study(const RunConfig& cfg, int draws) {
    prepare_out(cfg, "perturb-study");
    Corpus val = load_split(cfg, "val");
    CheckpointState st = load_checkpoint(cfg.checkpoint);

    auto f = open_report(cfg, "perturb_study.csv");
    f << "kind,level,draws,mean_dice\n";
    for (float level : cfg.perturb_levels) {
        PerturbationSpec spec;
        spec = PerturbationSpec::parse(cfg.perturb_kind + ":" + std::to_string(level) + ":" +
                                       std::to_string(cfg.perturb_seed));
        const int nd = level > 0.0f ? draws : 1;
        double acc = 0.0;
        for (int i = 0; i < val.size(); ++i) {
            Tensor img = Tensor::from_data({1, 1, val.h, val.w}, val.images[i]);
            SegMask ref = val.mask_at(i);
            double sacc = 0.0;
            for (int d = 0; d < nd; ++d) {
                Tensor noisy = apply(spec, img, (uint64_t)i * 1000003ULL + d);
                ForwardOutput out = forward(st.model, noisy);
                sacc += evaluate_sample(argmax_mask(out.logits, val.num_classes), ref).mean_dice;
            }
            acc += sacc / nd;
        }
        f << cfg.perturb_kind << ',' << level << ',' << nd << ',' << acc / val.size() << '\n';
        std::cout << cfg.perturb_kind << " level " << level << " mean dice " << acc / val.size()
                  << "\n";
    }
    return 0;
}

int cmd_latent_variance(const RunConfig& cfg) {
    prepare_out(cfg, "latent-variance");
    Corpus val = load_split(cfg, "val");
    CheckpointState st = load_checkpoint(cfg.checkpoint);

    auto f = open_report(cfg, "latent_variance.csv");
    f << "tag,level,images,features,mean_variance\n";
    std::vector<LatentTap> taps;
    if (st.model.cfg.vq_enabled) taps = {LatentTap::vq_pre, LatentTap::vq_post};
    else taps = {LatentTap::baseline};

    for (float level : cfg.perturb_levels) {
        PerturbationSpec spec = PerturbationSpec::parse(
            cfg.perturb_kind + ":" + std::to_string(level) + ":" + std::to_string(cfg.perturb_seed));
        for (LatentTap tap : taps) {
            auto rep = latent_variance_study(st.model, val, cfg.study_images, spec, tap,
                                             cfg.study_draws);
            f << rep.tag << ',' << level << ',' << rep.images << ',' << rep.features << ','
              << rep.mean_variance << '\n';
            std::ostringstream name;
            name << cfg.out_dir << "/variance_" << rep.tag << "_" << level << ".pgm";
            write_variance_pgm(rep, name.str());
            std::cout << rep.tag << " level " << level << " mean variance " << rep.mean_variance
                      << "\n";
        }
    }
    return 0;
}

int cmd_codebook_stats(const RunConfig& cfg) {
    prepare_out(cfg, "codebook-stats");
    CheckpointState st = load_checkpoint(cfg.checkpoint);
    if (!st.model.cfg.vq_enabled) throw ConfigError("codebook-stats: checkpoint has no quantiser");

    CodebookStats s = compute_r(st.model.codebook);
    std::vector<int64_t> usage;
    double perplexity = 0.0;
    Corpus val = load_split(cfg, "val");
    codebook_usage(st.model, val, usage, perplexity);

    auto f = open_report(cfg, "codebook_stats.csv");
    f << "# mean r = " << s.r_mean << " +- " << s.r_std
      << " (literal divisor K-1; mean-over-K variant = " << s.r_mean_over_k << ")\n";
    f << "# perplexity = " << perplexity << " of K = " << st.model.cfg.K << "\n";
    f << "k,r_i,usage\n";
    for (int k = 0; k < st.model.cfg.K; ++k) f << k << ',' << s.r_i[k] << ',' << usage[k] << '\n';

    codebook_save_csv(st.model.codebook, cfg.out_dir + "/codebook.csv");
    std::cout << "mean r " << s.r_mean << " +- " << s.r_std << ", perplexity " << perplexity
              << "\n";
    return 0;
}

int cmd_bound_check(const RunConfig& cfg, double h) {
    prepare_out(cfg, "bound-check");
    Corpus val = load_split(cfg, "val");
    CheckpointState st = load_checkpoint(cfg.checkpoint);
    if (!st.model.cfg.vq_enabled) throw ConfigError("bound-check: checkpoint has no quantiser");

    auto f = open_report(cfg, "bound_check.csv");
    f << "sample_id,level,jvp_norm,max_shift,r_i_assigned,within_half_r,codes_changed,"
         "taylor_residual\n";
    const int n = std::min(cfg.study_images, val.size());
    for (float level : cfg.perturb_levels) {
        if (level <= 0.0f) continue;
        PerturbationSpec spec = PerturbationSpec::parse(
            cfg.perturb_kind + ":" + std::to_string(level) + ":" + std::to_string(cfg.perturb_seed));
        for (int i = 0; i < n; ++i) {
            Tensor img = Tensor::from_data({1, 1, val.h, val.w}, val.images[i]);
            BoundCheckRecord r = bound_check(st.model, img, spec, h, i);
            f << i << ',' << level << ',' << r.jvp_norm << ',' << r.max_shift << ','
              << r.r_i_assigned << ',' << (r.within_half_r ? 1 : 0) << ','
              << (r.codes_changed ? 1 : 0) << ',' << r.taylor_residual << '\n';
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vector-quantised segmentation robustness harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--set", overrides, "configuration override key=value")->take_all();

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    auto* train = app.add_subcommand("train", "train a model on the corpus");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string split = "val";
    eval->add_option("--split", split, "corpus split (train/val/test)");
    auto* pstudy = app.add_subcommand("perturb-study", "Dice vs noise level table");
    int draws = 10;
    pstudy->add_option("--draws", draws, "noise draws per image per level");
    auto* lvar = app.add_subcommand("latent-variance", "latent variance across noise draws");
    auto* cstats = app.add_subcommand("codebook-stats", "codebook geometry and usage");
    auto* bcheck = app.add_subcommand("bound-check", "latent shift vs codebook radius");
    double h = 1e-3;
    bcheck->set_help_flag("--help", "print help");
    bcheck->add_option("--h", h, "finite-difference step");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path, overrides);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, split);
        if (pstudy->parsed()) return cmd_perturb_study(cfg, draws);
        if (lvar->parsed()) return cmd_latent_variance(cfg);
        if (cstats->parsed()) return cmd_codebook_stats(cfg);
        if (bcheck->parsed()) return cmd_bound_check(cfg, h);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
