#include "vqseg/losses.hpp"

namespace vqseg {

namespace {
constexpr float kDiceEps = 1e-5f;
}

DiceCe dice_ce_loss(const Tensor& logits, const SegMask& target) {
    const auto& ls = logits.shape();
    if (ls.size() != 4) throw DimensionError("dice_ce_loss: logits must be NCHW");
    const int N = ls[0], C = ls[1], H = ls[2], W = ls[3];
    if (target.n != N || target.h != H || target.w != W)
        throw DimensionError("dice_ce_loss: logits/target shape mismatch");
    const int64_t HW = (int64_t)H * W;
    for (uint8_t l : target.labels)
        if (l >= C) throw DimensionError("dice_ce_loss: label out of range");

    Tensor logp = log_softmax_channels(logits);
    Tensor p = softmax_channels(logits);

    // one-hot mask per class, as constants
    std::vector<Tensor> onehot(C);
    for (int c = 0; c < C; ++c) {
        std::vector<float> q((size_t)N * C * HW, 0.0f);
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < HW; ++i)
                if (target.labels[(int64_t)n * HW + i] == c) q[((int64_t)n * C + c) * HW + i] = 1.0f;
        onehot[c] = Tensor::from_data({N, C, H, W}, std::move(q));
    }

    Tensor dice_acc = Tensor::scalar(0.0f);
    Tensor ce_acc = Tensor::scalar(0.0f);
    for (int c = 0; c < C; ++c) {
        Tensor inter = sum(mul(p, onehot[c]));
        // |q_c| is a constant; |p_c| needs the channel-restricted sum of p
        double qsum = 0.0;
        for (float v : onehot[c].data()) qsum += v;
        std::vector<float> chan((size_t)N * C * HW, 0.0f);
        for (int n = 0; n < N; ++n)
            std::fill(chan.begin() + ((int64_t)n * C + c) * HW,
                      chan.begin() + ((int64_t)n * C + c + 1) * HW, 1.0f);
        Tensor chan_mask = Tensor::from_data({N, C, H, W}, std::move(chan));
        Tensor psum = sum(mul(p, chan_mask));
        Tensor num = add_const(scale(inter, 2.0f), kDiceEps);
        Tensor den = add_const(add_const(psum, static_cast<float>(qsum)), kDiceEps);
        dice_acc = add(dice_acc, div(num, den));

        ce_acc = add(ce_acc, sum(mul(logp, onehot[c])));
    }

    DiceCe out;
    out.dice_loss = add_const(scale(dice_acc, -1.0f / C), 1.0f);
    out.ce_loss = scale(ce_acc, -1.0f / static_cast<float>((int64_t)N * HW));
    return out;
}

}  // namespace vqseg
