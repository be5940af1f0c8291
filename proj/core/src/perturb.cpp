#include "vqseg/perturb.hpp"

#include <cmath>
#include <sstream>

#include "vqseg/rng.hpp"

namespace vqseg {

namespace {

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Raw noisy image before the delta/apply split. level > 0 here.
std::vector<float> noisy_values(const PerturbationSpec& spec, const Tensor& x,
                                uint64_t sample_index) {
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    Rng rng(substream_seed(spec.seed, "noise", sample_index));

    switch (spec.kind) {
        case NoiseKind::gaussian: {
            for (size_t i = 0; i < xd.size(); ++i)
                out[i] = clamp01(xd[i] + static_cast<float>(rng.normal() * spec.level));
            break;
        }
        case NoiseKind::salt_pepper: {
            for (size_t i = 0; i < xd.size(); ++i) {
                if (rng.uniform() < spec.level) out[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
                else out[i] = xd[i];
            }
            break;
        }
        case NoiseKind::poisson: {
            // count scale so that relative std at mid-gray (0.5) ~= level:
            // std(Pois(0.5 C)/C) = sqrt(0.5 C)/C = level  =>  C = 0.5/(0.5 level)^2
            const double C = std::max(1.0, std::round(0.5 / ((0.5 * spec.level) * (0.5 * spec.level))));
            for (size_t i = 0; i < xd.size(); ++i)
                out[i] = clamp01(static_cast<float>(double(rng.poisson(double(xd[i]) * C)) / C));
            break;
        }
        case NoiseKind::domain_shift: {
            const DomainParams dp = spec.domain_params.value_or(DomainParams{});
            // low-frequency bias field: three random sinusoids across the
            // flat buffer's spatial tail (H,W of an NCHW tensor)
            const auto& s = x.shape();
            const int W = s.back();
            const int H = s.size() >= 2 ? s[s.size() - 2] : 1;
            const int planes = static_cast<int>(xd.size()) / (H * W);
            struct Wave {
                double fx, fy, ph, amp;
            };
            Wave waves[3];
            for (auto& wv : waves) {
                wv.fx = rng.uniform(0.5, 2.0);
                wv.fy = rng.uniform(0.5, 2.0);
                wv.ph = rng.uniform(0.0, 2.0 * M_PI);
                wv.amp = dp.bias_amp / 3.0;
            }
            size_t i = 0;
            for (int p = 0; p < planes; ++p)
                for (int yy = 0; yy < H; ++yy)
                    for (int xx = 0; xx < W; ++xx, ++i) {
                        double bias = 0.0;
                        for (const auto& wv : waves)
                            bias += wv.amp * std::sin(2.0 * M_PI * (wv.fx * xx / W + wv.fy * yy / H) + wv.ph);
                        const double g = std::pow(double(std::max(xd[i], 0.0f)), double(dp.gamma));
                        const double shifted = dp.contrast * (g - 0.5) + 0.5 + bias;
                        // level blends between the original and the fully
                        // shifted appearance
                        out[i] = clamp01(static_cast<float>(double(xd[i]) +
                                                            double(spec.level) * (shifted - double(xd[i]))));
                    }
            break;
        }
        case NoiseKind::identity:
            out = xd;
            break;
    }
    return out;
}

}  // namespace

std::string noise_calibration_string() {
    return "noise-calibration: gaussian std=level; salt_pepper fraction=level; "
           "poisson C=round(0.5/(0.5*level)^2); domain_shift blend=level";
}

PerturbationSpec PerturbationSpec::parse(const std::string& triple) {
    std::stringstream ss(triple);
    std::string kind, level, seed;
    if (!std::getline(ss, kind, ':') || !std::getline(ss, level, ':') || !std::getline(ss, seed))
        throw ConfigError("perturbation spec must be kind:level:seed, got '" + triple + "'");
    PerturbationSpec spec;
    if (kind == "identity") spec.kind = NoiseKind::identity;
    else if (kind == "gaussian") spec.kind = NoiseKind::gaussian;
    else if (kind == "salt_pepper") spec.kind = NoiseKind::salt_pepper;
    else if (kind == "poisson") spec.kind = NoiseKind::poisson;
    else if (kind == "domain_shift") spec.kind = NoiseKind::domain_shift;
    else throw ConfigError("unknown noise kind '" + kind + "'");
    spec.level = std::stof(level);
    if (spec.level < 0.0f || spec.level > 1.0f) throw ConfigError("noise level must be in [0,1]");
    spec.seed = std::stoull(seed);
    return spec;
}

std::string PerturbationSpec::to_string() const {
    const char* k = "identity";
    switch (kind) {
        case NoiseKind::gaussian: k = "gaussian"; break;
        case NoiseKind::salt_pepper: k = "salt_pepper"; break;
        case NoiseKind::poisson: k = "poisson"; break;
        case NoiseKind::domain_shift: k = "domain_shift"; break;
        case NoiseKind::identity: break;
    }
    std::stringstream ss;
    ss << k << ':' << level << ':' << seed;
    return ss.str();
}

Tensor apply(const PerturbationSpec& spec, const Tensor& x, uint64_t sample_index) {
    for (float v : x.data())
        if (v < 0.0f || v > 1.0f) throw ConfigError("perturb: input values must be in [0,1]");
    if (spec.level <= 0.0f || spec.kind == NoiseKind::identity) {
        return Tensor::from_data(x.shape(), x.data());
    }
    // built as x + delta so apply and delta are bitwise consistent
    Tensor d = delta(spec, x, sample_index);
    std::vector<float> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + d.data()[i];
    return Tensor::from_data(x.shape(), std::move(out));
}

Tensor delta(const PerturbationSpec& spec, const Tensor& x, uint64_t sample_index) {
    for (float v : x.data())
        if (v < 0.0f || v > 1.0f) throw ConfigError("perturb: input values must be in [0,1]");
    std::vector<float> d(x.size(), 0.0f);
    if (spec.level > 0.0f && spec.kind != NoiseKind::identity) {
        auto noisy = noisy_values(spec, x, sample_index);
        for (size_t i = 0; i < d.size(); ++i) d[i] = noisy[i] - x.data()[i];
    }
    return Tensor::from_data(x.shape(), std::move(d));
}

}  // namespace vqseg
