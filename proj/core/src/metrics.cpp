#include "vqseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vqseg {

std::vector<double> dice_score(const SegMask& pred, const SegMask& target) {
    if (pred.n != target.n || pred.h != target.h || pred.w != target.w)
        throw DimensionError("dice_score: shape mismatch");
    const int C = std::max(pred.num_classes, target.num_classes);
    std::vector<int64_t> inter(C, 0), np(C, 0), nt(C, 0);
    for (int64_t i = 0; i < pred.size(); ++i) {
        const int p = pred.labels[i], t = target.labels[i];
        ++np[p];
        ++nt[t];
        if (p == t) ++inter[p];
    }
    std::vector<double> dice(C);
    for (int c = 0; c < C; ++c) {
        if (np[c] + nt[c] == 0) dice[c] = 1.0;  // absent in both
        else dice[c] = 2.0 * double(inter[c]) / double(np[c] + nt[c]);
    }
    return dice;
}

namespace {

// 1-D squared-distance lower envelope (Felzenszwalb & Huttenlocher)
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

constexpr double kInf = 1e18;

}  // namespace

std::vector<double> distance_transform(const std::vector<uint8_t>& binary, int h, int w) {
    std::vector<double> g((size_t)h * w);
    for (size_t i = 0; i < g.size(); ++i) g[i] = binary[i] ? 0.0 : kInf;

    std::vector<double> col(h), dcol(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[y] = g[(size_t)y * w + x];
        edt_1d(col, dcol, h);
        for (int y = 0; y < h; ++y) g[(size_t)y * w + x] = dcol[y];
    }
    std::vector<double> row(w), drow(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[x] = g[(size_t)y * w + x];
        edt_1d(row, drow, w);
        for (int x = 0; x < w; ++x) g[(size_t)y * w + x] = drow[x];
    }
    return g;  // squared distances
}

namespace {

std::vector<uint8_t> boundary_pixels(const SegMask& m, int class_id, int sample) {
    const int h = m.h, w = m.w;
    const uint8_t* lab = m.labels.data() + (size_t)sample * h * w;
    std::vector<uint8_t> b((size_t)h * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (lab[y * w + x] != class_id) continue;
            const bool edge = (y == 0 || lab[(y - 1) * w + x] != class_id) ||
                              (y == h - 1 || lab[(y + 1) * w + x] != class_id) ||
                              (x == 0 || lab[y * w + x - 1] != class_id) ||
                              (x == w - 1 || lab[y * w + x + 1] != class_id);
            if (edge) b[(size_t)y * w + x] = 1;
        }
    return b;
}

}  // namespace

std::pair<double, double> surface_distances(const SegMask& pred, const SegMask& target,
                                            int class_id, double spacing) {
    if (pred.n != target.n || pred.h != target.h || pred.w != target.w)
        throw DimensionError("surface_distances: shape mismatch");
    std::vector<double> pooled;
    bool any = false;
    for (int s = 0; s < pred.n; ++s) {
        auto bp = boundary_pixels(pred, class_id, s);
        auto bt = boundary_pixels(target, class_id, s);
        const bool hp = std::any_of(bp.begin(), bp.end(), [](uint8_t v) { return v != 0; });
        const bool ht = std::any_of(bt.begin(), bt.end(), [](uint8_t v) { return v != 0; });
        if (!hp && !ht) continue;
        any = true;
        if (!hp || !ht) {
            // one side empty: every distance is effectively unbounded; report
            // the image diagonal as a conservative finite stand-in
            const double diag = std::hypot(double(pred.h), double(pred.w));
            const auto& nonempty = hp ? bp : bt;
            for (uint8_t v : nonempty)
                if (v) pooled.push_back(diag);
            continue;
        }
        auto dt_p = distance_transform(bp, pred.h, pred.w);
        auto dt_t = distance_transform(bt, pred.h, pred.w);
        for (size_t i = 0; i < bp.size(); ++i) {
            if (bp[i]) pooled.push_back(std::sqrt(dt_t[i]));
            if (bt[i]) pooled.push_back(std::sqrt(dt_p[i]));
        }
    }
    if (!any) throw EmptyClassError("surface_distances: class absent in both masks");
    double asd = 0.0;
    for (double d : pooled) asd += d;
    asd /= double(pooled.size());
    const double hd95 = percentile(pooled, 95.0);
    return {hd95 * spacing, asd * spacing};
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DimensionError("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * double(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - double(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

MetricReport evaluate_sample(const SegMask& pred, const SegMask& target, double spacing) {
    MetricReport r;
    r.per_class_dice = dice_score(pred, target);
    const int C = static_cast<int>(r.per_class_dice.size());

    std::vector<bool> in_target(C, false);
    for (uint8_t l : target.labels) in_target[l] = true;
    double acc = 0.0;
    int cnt = 0;
    for (int c = 0; c < C; ++c)
        if (in_target[c]) {
            acc += r.per_class_dice[c];
            ++cnt;
        }
    r.mean_dice = cnt ? acc / cnt : 1.0;

    double hd_acc = 0.0, asd_acc = 0.0;
    int sd_cnt = 0;
    for (int c = 1; c < C; ++c) {  // foreground classes
        try {
            auto [hd, asd] = surface_distances(pred, target, c, spacing);
            hd_acc += hd;
            asd_acc += asd;
            ++sd_cnt;
        } catch (const EmptyClassError&) {
        }
    }
    r.hd95 = sd_cnt ? hd_acc / sd_cnt : 0.0;
    r.asd = sd_cnt ? asd_acc / sd_cnt : 0.0;
    return r;
}

}  // namespace vqseg
