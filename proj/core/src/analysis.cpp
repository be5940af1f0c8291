#include "vqseg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vqseg {

CodebookStats compute_r(const Codebook& codebook) {
    const int K = codebook.K, D = codebook.D;
    if (K < 2) throw ConfigError("compute_r: K must be >= 2");
    const float* v = codebook.vectors.data().data();

    CodebookStats s;
    s.r_i.resize(K);
    for (int k = 0; k < K; ++k) {
        double best = 1e300;
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            double d2 = 0.0;
            for (int d = 0; d < D; ++d) {
                const double diff = double(v[(size_t)k * D + d]) - double(v[(size_t)j * D + d]);
                d2 += diff * diff;
            }
            best = std::min(best, d2);
        }
        s.r_i[k] = std::sqrt(best);
    }

    double sum_half = 0.0;
    for (int k = 0; k < K; ++k) sum_half += 0.5 * s.r_i[k];
    s.r_mean = sum_half / double(K - 1);
    s.r_mean_over_k = sum_half / double(K);
    double var = 0.0;
    const double mean_half = sum_half / double(K);
    for (int k = 0; k < K; ++k) {
        const double d = 0.5 * s.r_i[k] - mean_half;
        var += d * d;
    }
    s.r_std = std::sqrt(var / double(K));
    return s;
}

void codebook_usage(const Model& model, const Corpus& corpus, std::vector<int64_t>& histogram,
                    double& perplexity) {
    if (!model.cfg.vq_enabled) throw ConfigError("codebook_usage: model has no quantiser");
    histogram.assign(model.cfg.K, 0);
    for (int i = 0; i < corpus.size(); ++i) {
        Tensor img = Tensor::from_data({1, 1, corpus.h, corpus.w}, corpus.images[i]);
        Tensor e = nchw_to_rows(encode(model, img));
        auto idx = nearest_assign(e, model.codebook);
        for (int k : idx) ++histogram[k];
    }
    perplexity = usage_perplexity(histogram);
}

double usage_perplexity(const std::vector<int64_t>& histogram) {
    int64_t total = 0;
    for (int64_t c : histogram) total += c;
    if (total == 0) throw ConfigError("usage_perplexity: empty histogram");
    double entropy = 0.0;
    for (int64_t c : histogram) {
        if (c == 0) continue;
        const double p = double(c) / double(total);
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

LatentVarianceReport latent_variance_study(const Model& model, const Corpus& images,
                                           int image_count, const PerturbationSpec& spec,
                                           LatentTap tap, int draws) {
    if (draws < 2) throw ConfigError("latent_variance_study: draws must be >= 2");
    if (tap != LatentTap::baseline && !model.cfg.vq_enabled)
        throw ConfigError("latent_variance_study: vq tap on a model without quantiser");
    image_count = std::min(image_count, images.size());

    LatentVarianceReport rep;
    rep.tag = tap == LatentTap::vq_pre ? "vq-pre" : (tap == LatentTap::vq_post ? "vq-post" : "baseline");
    rep.level = spec.level;
    rep.images = image_count;

    for (int i = 0; i < image_count; ++i) {
        Tensor img = Tensor::from_data({1, 1, images.h, images.w}, images.images[i]);
        std::vector<double> sum, sumsq;
        for (int d = 0; d < draws; ++d) {
            Tensor noisy = apply(spec, img, (uint64_t)i * 1000003ULL + d);
            Tensor e = encode(model, noisy);
            Tensor rows = nchw_to_rows(e);
            Tensor lat = rows;
            if (tap == LatentTap::vq_post) {
                auto idx = nearest_assign(rows, model.codebook);
                lat = gather_rows(detach(model.codebook.vectors), idx);
            }
            const auto& vals = lat.data();
            if (sum.empty()) {
                sum.assign(vals.size(), 0.0);
                sumsq.assign(vals.size(), 0.0);
                rep.features = static_cast<int>(vals.size());
            }
            for (size_t j = 0; j < vals.size(); ++j) {
                sum[j] += vals[j];
                sumsq[j] += double(vals[j]) * vals[j];
            }
        }
        for (size_t j = 0; j < sum.size(); ++j) {
            const double m = sum[j] / draws;
            double var = sumsq[j] / draws - m * m;
            if (var < 0.0) var = 0.0;  // rounding guard
            rep.variance_matrix.push_back(var);
        }
    }
    double acc = 0.0;
    for (double v : rep.variance_matrix) acc += v;
    rep.mean_variance = rep.variance_matrix.empty() ? 0.0 : acc / double(rep.variance_matrix.size());
    return rep;
}

void write_variance_pgm(const LatentVarianceReport& report, const std::string& path,
                        int max_features) {
    const int cols = std::min(report.features, max_features);
    double vmax = 0.0;
    for (int i = 0; i < report.images; ++i)
        for (int j = 0; j < cols; ++j)
            vmax = std::max(vmax, report.variance_matrix[(size_t)i * report.features + j]);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_variance_pgm: cannot open " + path);
    f << "P2\n# latent variance heatmap tag=" << report.tag << " level=" << report.level << "\n"
      << cols << ' ' << report.images << "\n255\n";
    for (int i = 0; i < report.images; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double v = report.variance_matrix[(size_t)i * report.features + j];
            const int g = vmax > 0.0 ? std::min(255, int(std::lround(v / vmax * 255.0))) : 0;
            f << g << (j + 1 == cols ? '\n' : ' ');
        }
    }
}

BoundCheckRecord bound_check(const EncoderFn& encoder, const Codebook& codebook, const Tensor& x,
                             const PerturbationSpec& spec, double h, uint64_t sample_index) {
    if (h <= 0.0) throw ConfigError("bound_check: h must be positive");
    Tensor d = delta(spec, x, sample_index);

    Tensor e0 = encoder(x);
    const int M = e0.shape()[0], D = e0.shape()[1];
    auto idx0 = nearest_assign(e0, codebook);
    CodebookStats geo = compute_r(codebook);

    // x + h*delta
    std::vector<float> xh(x.size()), xf(x.size());
    for (int64_t i = 0; i < x.size(); ++i) {
        xh[i] = static_cast<float>(double(x.data()[i]) + h * double(d.data()[i]));
        xf[i] = x.data()[i] + d.data()[i];
    }
    Tensor eh = encoder(Tensor::from_data(x.shape(), std::move(xh)));
    Tensor ef = encoder(Tensor::from_data(x.shape(), std::move(xf)));

    BoundCheckRecord rec;
    rec.r_i_assigned = 1e300;
    double max_jvp = 0.0, max_shift = 0.0, residual2 = 0.0;
    for (int m = 0; m < M; ++m) {
        double jvp2 = 0.0, shift2 = 0.0;
        for (int dd = 0; dd < D; ++dd) {
            const size_t j = (size_t)m * D + dd;
            const double fd = (double(eh.data()[j]) - double(e0.data()[j])) / h;
            jvp2 += fd * fd;
            const double sh = double(ef.data()[j]) - double(e0.data()[j]);
            shift2 += sh * sh;
            const double res = sh - fd;  // Taylor residual uses the h-step surrogate
            residual2 += res * res;
        }
        max_jvp = std::max(max_jvp, std::sqrt(jvp2));
        max_shift = std::max(max_shift, std::sqrt(shift2));
        rec.r_i_assigned = std::min(rec.r_i_assigned, geo.r_i[idx0[m]]);
    }
    if (!std::isfinite(max_jvp) || !std::isfinite(max_shift))
        throw NumericalError("bound_check: non-finite encoder response");

    rec.jvp_norm = max_jvp;
    rec.max_shift = max_shift;
    rec.taylor_residual = std::sqrt(residual2);
    auto idxf = nearest_assign(ef, codebook);
    rec.codes_changed = idxf != idx0;
    rec.within_half_r = max_shift < rec.r_i_assigned / 2.0;
    return rec;
}

BoundCheckRecord bound_check(const Model& model, const Tensor& x, const PerturbationSpec& spec,
                             double h, uint64_t sample_index) {
    if (!model.cfg.vq_enabled) throw ConfigError("bound_check: model has no quantiser");
    auto enc = [&model](const Tensor& img) { return nchw_to_rows(encode(model, img)); };
    return bound_check(enc, model.codebook, x, spec, h, sample_index);
}

}  // namespace vqseg
