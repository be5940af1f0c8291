#include "vqseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace vqseg {

namespace {

std::atomic<int64_t> g_seq{0};

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<float> data) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->seq = g_seq.fetch_add(1);
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch");
}

struct OutBuilder {
    std::shared_ptr<TensorNode> out;
    OutBuilder(Shape shape, std::string op, std::vector<Tensor> inputs) {
        out = make_node(std::move(shape), {});
        out->data.resize(numel(out->shape));
        out->op = std::move(op);
        for (auto& t : inputs) {
            out->parents.push_back(t.node());
            if (t.node()->requires_grad) out->requires_grad = true;
        }
    }
    Tensor finish(std::function<void(TensorNode&)> bw) {
        if (out->requires_grad) out->backward_fn = std::move(bw);
        return Tensor(out);
    }
};

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = make_node(std::move(shape), {});
    n->data.assign(numel(n->shape), 0.0f);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    auto n = make_node(std::move(shape), {});
    n->data.assign(numel(n->shape), value);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw DimensionError("from_data: shape/data length mismatch");
    auto n = make_node(std::move(shape), std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (node_->data.size() != 1) throw DimensionError("item: tensor is not scalar");
    return node_->data[0];
}

void backward(const Tensor& loss) {
    auto root = loss.node();
    if (!root) throw DimensionError("backward: undefined tensor");
    if (root->data.size() != 1) throw DimensionError("backward: loss must be scalar");
    if (root->backward_done) throw ConfigError("backward: already run on this loss; reset first");
    root->backward_done = true;

    // collect reachable nodes
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::shared_ptr<TensorNode>> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        order.push_back(n.get());
        for (auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p);
    }
    // exact reverse creation order
    std::sort(order.begin(), order.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (TensorNode* n : order) {
        if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
    }
}

bool all_finite(const Tensor& t) {
    for (float v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

std::string first_nonfinite_op(const Tensor& t) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::shared_ptr<TensorNode>> stack{t.node()};
    seen.insert(t.node().get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        order.push_back(n.get());
        for (auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p);
    }
    std::sort(order.begin(), order.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->seq < b->seq; });
    for (TensorNode* n : order) {
        for (float v : n->data)
            if (!std::isfinite(v)) return n->op.empty() ? std::string("<leaf>") : n->op;
    }
    return {};
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    OutBuilder ob(a.shape(), "add", {a, b});
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) ob.out->data[i] = ad[i] + bd[i];
    return ob.finish([](TensorNode& o) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *o.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    OutBuilder ob(a.shape(), "sub", {a, b});
    for (size_t i = 0; i < a.data().size(); ++i) ob.out->data[i] = a.data()[i] - b.data()[i];
    return ob.finish([](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    OutBuilder ob(a.shape(), "mul", {a, b});
    for (size_t i = 0; i < a.data().size(); ++i) ob.out->data[i] = a.data()[i] * b.data()[i];
    return ob.finish([](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    const bool scalar_b = b.size() == 1;
    if (!scalar_b) check_same_shape(a, b, "div");
    OutBuilder ob(a.shape(), "div", {a, b});
    for (size_t i = 0; i < a.data().size(); ++i)
        ob.out->data[i] = a.data()[i] / b.data()[scalar_b ? 0 : i];
    return ob.finish([scalar_b](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                pa.grad[i] += o.grad[i] / pb.data[scalar_b ? 0 : i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const float bv = pb.data[scalar_b ? 0 : i];
                pb.grad[scalar_b ? 0 : i] -= o.grad[i] * pa.data[i] / (bv * bv);
            }
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    OutBuilder ob(a.shape(), "scale", {a});
    for (size_t i = 0; i < a.data().size(); ++i) ob.out->data[i] = a.data()[i] * s;
    return ob.finish([s](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * s;
    });
}

Tensor add_const(const Tensor& a, float c) {
    OutBuilder ob(a.shape(), "add_const", {a});
    for (size_t i = 0; i < a.data().size(); ++i) ob.out->data[i] = a.data()[i] + c;
    return ob.finish([](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor square(const Tensor& a) {
    OutBuilder ob(a.shape(), "square", {a});
    for (size_t i = 0; i < a.data().size(); ++i) ob.out->data[i] = a.data()[i] * a.data()[i];
    return ob.finish([](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += 2.0f * o.grad[i] * p.data[i];
    });
}

Tensor sum(const Tensor& a) {
    OutBuilder ob({1}, "sum", {a});
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    ob.out->data[0] = static_cast<float>(acc);
    return ob.finish([](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        const float g = o.grad[0];
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

Tensor mean(const Tensor& a) {
    const float inv = 1.0f / static_cast<float>(a.size());
    OutBuilder ob({1}, "mean", {a});
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    ob.out->data[0] = static_cast<float>(acc / static_cast<double>(a.size()));
    return ob.finish([inv](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        const float g = o.grad[0] * inv;
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul: need [m,k]x[k,n]");
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    OutBuilder ob({m, n}, "matmul", {a, b});
    const float* A = a.data().data();
    const float* B = b.data().data();
    float* C = ob.out->data.data();
#pragma omp parallel for if (m > 8)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += double(A[i * k + t]) * double(B[t * n + j]);
            C[i * n + j] = static_cast<float>(acc);
        }
    }
    return ob.finish([m, k, n](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += double(o.grad[i * n + j]) * double(pb.data[t * n + j]);
                    pa.grad[i * k + t] += static_cast<float>(acc);
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += double(pa.data[i * k + t]) * double(o.grad[i * n + j]);
                    pb.grad[t * n + j] += static_cast<float>(acc);
                }
        }
    });
}

Tensor swish(const Tensor& a) {
    OutBuilder ob(a.shape(), "swish", {a});
    for (size_t i = 0; i < a.data().size(); ++i) {
        const float x = a.data()[i];
        ob.out->data[i] = x * sigmoidf(x);
    }
    return ob.finish([](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const float x = p.data[i];
            const float s = sigmoidf(x);
            p.grad[i] += o.grad[i] * (s + x * s * (1.0f - s));
        }
    });
}

// ---- convolution ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (is.size() != 4 || ks.size() != 4)
        throw DimensionError("conv2d: input and kernel must be 4-D");
    if (is[1] != ks[1])
        throw DimensionError("conv2d: channel mismatch, input C=" + std::to_string(is[1]) +
                             " kernel C=" + std::to_string(ks[1]));
    if (ks[2] != ks[3] || ks[2] % 2 == 0) throw DimensionError("conv2d: kernel must be square odd");
    if (stride != 1 && stride != 2) throw DimensionError("conv2d: stride must be 1 or 2");
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    const int F = ks[0], K = ks[2];
    if (H < K || W < K) throw DimensionError("conv2d: input smaller than kernel");
    const int OH = (H + 2 * padding - K) / stride + 1;
    const int OW = (W + 2 * padding - K) / stride + 1;

    OutBuilder ob({N, F, OH, OW}, "conv2d", {input, kernel});
    const float* in = input.data().data();
    const float* ker = kernel.data().data();
    float* out = ob.out->data.data();

#pragma omp parallel for collapse(2)
    for (int n = 0; n < N; ++n) {
        for (int f = 0; f < F; ++f) {
            float* op = out + ((int64_t)n * F + f) * OH * OW;
            std::fill(op, op + OH * OW, 0.0f);
            for (int c = 0; c < C; ++c) {
                const float* ip = in + ((int64_t)n * C + c) * H * W;
                const float* kp = ker + ((int64_t)f * C + c) * K * K;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const float kv = kp[ky * K + kx];
                        if (kv == 0.0f) continue;
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride - padding + ky;
                            if (ih < 0 || ih >= H) continue;
                            const float* irow = ip + ih * W;
                            float* orow = op + oh * OW;
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - padding + kx;
                                if (iw < 0 || iw >= W) continue;
                                orow[ow] += kv * irow[iw];
                            }
                        }
                    }
                }
            }
        }
    }

    return ob.finish([N, C, H, W, F, K, OH, OW, stride, padding](TensorNode& o) {
        auto& pin = *o.parents[0];
        auto& pker = *o.parents[1];
        const float* go = o.grad.data();
        if (pin.requires_grad) {
            pin.ensure_grad();
            float* gi = pin.grad.data();
            const float* ker = pker.data.data();
#pragma omp parallel for collapse(2)
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    float* gip = gi + ((int64_t)n * C + c) * H * W;
                    for (int f = 0; f < F; ++f) {
                        const float* gop = go + ((int64_t)n * F + f) * OH * OW;
                        const float* kp = ker + ((int64_t)f * C + c) * K * K;
                        for (int ky = 0; ky < K; ++ky) {
                            for (int kx = 0; kx < K; ++kx) {
                                const float kv = kp[ky * K + kx];
                                if (kv == 0.0f) continue;
                                for (int oh = 0; oh < OH; ++oh) {
                                    const int ih = oh * stride - padding + ky;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int ow = 0; ow < OW; ++ow) {
                                        const int iw = ow * stride - padding + kx;
                                        if (iw < 0 || iw >= W) continue;
                                        gip[ih * W + iw] += kv * gop[oh * OW + ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if (pker.requires_grad) {
            pker.ensure_grad();
            float* gk = pker.grad.data();
            const float* in = pin.data.data();
#pragma omp parallel for
            for (int f = 0; f < F; ++f) {
                for (int c = 0; c < C; ++c) {
                    float* gkp = gk + ((int64_t)f * C + c) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        for (int kx = 0; kx < K; ++kx) {
                            double acc = 0.0;
                            for (int n = 0; n < N; ++n) {
                                const float* gop = go + ((int64_t)n * F + f) * OH * OW;
                                const float* ip = in + ((int64_t)n * C + c) * H * W;
                                for (int oh = 0; oh < OH; ++oh) {
                                    const int ih = oh * stride - padding + ky;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int ow = 0; ow < OW; ++ow) {
                                        const int iw = ow * stride - padding + kx;
                                        if (iw < 0 || iw >= W) continue;
                                        acc += double(gop[oh * OW + ow]) * double(ip[ih * W + iw]);
                                    }
                                }
                            }
                            gkp[ky * K + kx] += static_cast<float>(acc);
                        }
                    }
                }
            }
        }
    });
}

Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
    const auto& is = input.shape();
    if (is.size() != 4 || bias.shape().size() != 1 || bias.shape()[0] != is[1])
        throw DimensionError("add_channel_bias: bias must be [C]");
    const int N = is[0], C = is[1], HW = is[2] * is[3];
    OutBuilder ob(is, "add_channel_bias", {input, bias});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float b = bias.data()[c];
            const int64_t base = ((int64_t)n * C + c) * HW;
            for (int i = 0; i < HW; ++i) ob.out->data[base + i] = input.data()[base + i] + b;
        }
    return ob.finish([N, C, HW](TensorNode& o) {
        auto& pin = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pin.requires_grad) {
            pin.ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) pin.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const int64_t base = ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i) acc += o.grad[base + i];
                }
                pb.grad[c] += static_cast<float>(acc);
            }
        }
    });
}

// ---- group norm ----

Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps) {
    const auto& is = input.shape();
    if (is.size() != 4) throw DimensionError("group_norm: input must be NCHW");
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    if (C % groups != 0) throw ConfigError("group_norm: C not divisible by groups");
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw DimensionError("group_norm: gamma/beta must be [C]");
    if (eps <= 0.0f) throw ConfigError("group_norm: eps must be positive");
    const int CG = C / groups;
    const int64_t gsize = (int64_t)CG * H * W;

    OutBuilder ob(is, "group_norm", {input, gamma, beta});
    auto xhat = std::make_shared<std::vector<float>>(input.data().size());
    auto inv_std = std::make_shared<std::vector<float>>((size_t)N * groups);

    const float* in = input.data().data();
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const int64_t base = ((int64_t)n * C + (int64_t)g * CG) * H * W;
            double m = 0.0;
            for (int64_t i = 0; i < gsize; ++i) m += in[base + i];
            m /= double(gsize);
            double var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) {
                const double d = in[base + i] - m;
                var += d * d;
            }
            var /= double(gsize);
            const float is_ = static_cast<float>(1.0 / std::sqrt(var + eps));
            (*inv_std)[(size_t)n * groups + g] = is_;
            for (int64_t i = 0; i < gsize; ++i) {
                const int c = g * CG + static_cast<int>(i / (H * W));
                const float xh = (in[base + i] - static_cast<float>(m)) * is_;
                (*xhat)[base + i] = xh;
                ob.out->data[base + i] = gamma.data()[c] * xh + beta.data()[c];
            }
        }
    }

    return ob.finish([N, C, H, W, groups, CG, gsize, xhat, inv_std](TensorNode& o) {
        auto& pin = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        const int HW = H * W;
        if (pg.requires_grad) {
            pg.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const int64_t base = ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i)
                        acc += double(o.grad[base + i]) * double((*xhat)[base + i]);
                }
                pg.grad[c] += static_cast<float>(acc);
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const int64_t base = ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i) acc += o.grad[base + i];
                }
                pb.grad[c] += static_cast<float>(acc);
            }
        }
        if (pin.requires_grad) {
            pin.ensure_grad();
            for (int n = 0; n < N; ++n) {
                for (int g = 0; g < groups; ++g) {
                    const int64_t base = ((int64_t)n * C + (int64_t)g * CG) * HW;
                    const float is_ = (*inv_std)[(size_t)n * groups + g];
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int64_t i = 0; i < gsize; ++i) {
                        const int c = g * CG + static_cast<int>(i / HW);
                        const double dxh = double(o.grad[base + i]) * double(pg.data[c]);
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * double((*xhat)[base + i]);
                    }
                    const double m1 = sum_dxh / double(gsize);
                    const double m2 = sum_dxh_xh / double(gsize);
                    for (int64_t i = 0; i < gsize; ++i) {
                        const int c = g * CG + static_cast<int>(i / HW);
                        const double dxh = double(o.grad[base + i]) * double(pg.data[c]);
                        pin.grad[base + i] += static_cast<float>(
                            double(is_) * (dxh - m1 - double((*xhat)[base + i]) * m2));
                    }
                }
            }
        }
    });
}

// ---- softmax over channels ----

Tensor softmax_channels(const Tensor& input) {
    const auto& is = input.shape();
    if (is.size() != 4) throw DimensionError("softmax_channels: input must be NCHW");
    const int N = is[0], C = is[1], HW = is[2] * is[3];
    OutBuilder ob(is, "softmax_channels", {input});
    const float* in = input.data().data();
    float* out = ob.out->data.data();
    for (int n = 0; n < N; ++n) {
        for (int p = 0; p < HW; ++p) {
            float mx = -1e30f;
            for (int c = 0; c < C; ++c) mx = std::max(mx, in[((int64_t)n * C + c) * HW + p]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) z += std::exp(double(in[((int64_t)n * C + c) * HW + p] - mx));
            for (int c = 0; c < C; ++c)
                out[((int64_t)n * C + c) * HW + p] =
                    static_cast<float>(std::exp(double(in[((int64_t)n * C + c) * HW + p] - mx)) / z);
        }
    }
    return ob.finish([N, C, HW](TensorNode& o) {
        auto& p0 = *o.parents[0];
        p0.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int p = 0; p < HW; ++p) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) {
                    const int64_t idx = ((int64_t)n * C + c) * HW + p;
                    dot += double(o.grad[idx]) * double(o.data[idx]);
                }
                for (int c = 0; c < C; ++c) {
                    const int64_t idx = ((int64_t)n * C + c) * HW + p;
                    p0.grad[idx] += static_cast<float>(double(o.data[idx]) *
                                                       (double(o.grad[idx]) - dot));
                }
            }
    });
}

Tensor log_softmax_channels(const Tensor& input) {
    const auto& is = input.shape();
    if (is.size() != 4) throw DimensionError("log_softmax_channels: input must be NCHW");
    const int N = is[0], C = is[1], HW = is[2] * is[3];
    OutBuilder ob(is, "log_softmax_channels", {input});
    const float* in = input.data().data();
    float* out = ob.out->data.data();
    for (int n = 0; n < N; ++n)
        for (int p = 0; p < HW; ++p) {
            float mx = -1e30f;
            for (int c = 0; c < C; ++c) mx = std::max(mx, in[((int64_t)n * C + c) * HW + p]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) z += std::exp(double(in[((int64_t)n * C + c) * HW + p] - mx));
            const double lz = std::log(z) + mx;
            for (int c = 0; c < C; ++c)
                out[((int64_t)n * C + c) * HW + p] =
                    static_cast<float>(double(in[((int64_t)n * C + c) * HW + p]) - lz);
        }
    return ob.finish([N, C, HW](TensorNode& o) {
        auto& p0 = *o.parents[0];
        p0.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int p = 0; p < HW; ++p) {
                double gs = 0.0;
                for (int c = 0; c < C; ++c) gs += o.grad[((int64_t)n * C + c) * HW + p];
                for (int c = 0; c < C; ++c) {
                    const int64_t idx = ((int64_t)n * C + c) * HW + p;
                    p0.grad[idx] +=
                        static_cast<float>(double(o.grad[idx]) - std::exp(double(o.data[idx])) * gs);
                }
            }
    });
}

// ---- spatial ops ----

Tensor upsample_nearest2(const Tensor& input) {
    const auto& is = input.shape();
    if (is.size() != 4) throw DimensionError("upsample_nearest2: input must be NCHW");
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    OutBuilder ob({N, C, 2 * H, 2 * W}, "upsample_nearest2", {input});
    const float* in = input.data().data();
    float* out = ob.out->data.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const float* ip = in + (int64_t)nc * H * W;
        float* op = out + (int64_t)nc * 4 * H * W;
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w) op[h * 2 * W + w] = ip[(h / 2) * W + (w / 2)];
    }
    return ob.finish([N, C, H, W](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const float* gp = o.grad.data() + (int64_t)nc * 4 * H * W;
            float* pg = p.grad.data() + (int64_t)nc * H * W;
            for (int h = 0; h < 2 * H; ++h)
                for (int w = 0; w < 2 * W; ++w) pg[(h / 2) * W + (w / 2)] += gp[h * 2 * W + w];
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
        throw DimensionError("concat_channels: N/H/W must match");
    const int N = as[0], Ca = as[1], Cb = bs[1], HW = as[2] * as[3];
    OutBuilder ob({N, Ca + Cb, as[2], as[3]}, "concat_channels", {a, b});
    for (int n = 0; n < N; ++n) {
        std::copy(a.data().begin() + (int64_t)n * Ca * HW, a.data().begin() + (int64_t)(n + 1) * Ca * HW,
                  ob.out->data.begin() + (int64_t)n * (Ca + Cb) * HW);
        std::copy(b.data().begin() + (int64_t)n * Cb * HW, b.data().begin() + (int64_t)(n + 1) * Cb * HW,
                  ob.out->data.begin() + (int64_t)n * (Ca + Cb) * HW + (int64_t)Ca * HW);
    }
    return ob.finish([N, Ca, Cb, HW](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < (int64_t)Ca * HW; ++i)
                    pa.grad[(int64_t)n * Ca * HW + i] += o.grad[(int64_t)n * (Ca + Cb) * HW + i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < (int64_t)Cb * HW; ++i)
                    pb.grad[(int64_t)n * Cb * HW + i] +=
                        o.grad[(int64_t)n * (Ca + Cb) * HW + (int64_t)Ca * HW + i];
        }
    });
}

Tensor straight_through(const Tensor& encoder_out, const Tensor& quantised) {
    check_same_shape(encoder_out, quantised, "straight_through");
    OutBuilder ob(encoder_out.shape(), "straight_through", {encoder_out, quantised});
    ob.out->data = quantised.data();
    // gradient is copied verbatim onto the encoder output; the quantised
    // branch receives nothing through this op
    ob.out->requires_grad = encoder_out.node()->requires_grad;
    if (!ob.out->requires_grad) return Tensor(ob.out);
    return ob.finish([](TensorNode& o) {
        auto& pe = *o.parents[0];
        pe.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) pe.grad[i] += o.grad[i];
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    const auto& ts = table.shape();
    if (ts.size() != 2) throw DimensionError("gather_rows: table must be 2-D");
    const int K = ts[0], D = ts[1];
    const int M = static_cast<int>(indices.size());
    for (int idx : indices)
        if (idx < 0 || idx >= K) throw DimensionError("gather_rows: index out of range");
    OutBuilder ob({M, D}, "gather_rows", {table});
    for (int m = 0; m < M; ++m)
        std::copy(table.data().begin() + (int64_t)indices[m] * D,
                  table.data().begin() + (int64_t)(indices[m] + 1) * D,
                  ob.out->data.begin() + (int64_t)m * D);
    auto idx_copy = indices;
    return ob.finish([D, idx = std::move(idx_copy)](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (size_t m = 0; m < idx.size(); ++m)
            for (int d = 0; d < D; ++d) p.grad[(int64_t)idx[m] * D + d] += o.grad[(int64_t)m * D + d];
    });
}

Tensor nchw_to_rows(const Tensor& input) {
    const auto& is = input.shape();
    if (is.size() != 4) throw DimensionError("nchw_to_rows: input must be NCHW");
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    OutBuilder ob({N * H * W, C}, "nchw_to_rows", {input});
    const float* in = input.data().data();
    float* out = ob.out->data.data();
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const int64_t row = ((int64_t)n * H + h) * W + w;
                for (int c = 0; c < C; ++c)
                    out[row * C + c] = in[(((int64_t)n * C + c) * H + h) * W + w];
            }
    return ob.finish([N, C, H, W](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const int64_t row = ((int64_t)n * H + h) * W + w;
                    for (int c = 0; c < C; ++c)
                        p.grad[(((int64_t)n * C + c) * H + h) * W + w] += o.grad[row * C + c];
                }
    });
}

Tensor rows_to_nchw(const Tensor& rows, int n, int c, int h, int w) {
    const auto& rs = rows.shape();
    if (rs.size() != 2 || rs[0] != n * h * w || rs[1] != c)
        throw DimensionError("rows_to_nchw: row count/dim mismatch");
    OutBuilder ob({n, c, h, w}, "rows_to_nchw", {rows});
    const float* in = rows.data().data();
    float* out = ob.out->data.data();
    for (int ni = 0; ni < n; ++ni)
        for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi) {
                const int64_t row = ((int64_t)ni * h + hi) * w + wi;
                for (int ci = 0; ci < c; ++ci)
                    out[(((int64_t)ni * c + ci) * h + hi) * w + wi] = in[row * c + ci];
            }
    return ob.finish([n, c, h, w](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (int ni = 0; ni < n; ++ni)
            for (int hi = 0; hi < h; ++hi)
                for (int wi = 0; wi < w; ++wi) {
                    const int64_t row = ((int64_t)ni * h + hi) * w + wi;
                    for (int ci = 0; ci < c; ++ci)
                        p.grad[row * c + ci] += o.grad[(((int64_t)ni * c + ci) * h + hi) * w + wi];
                }
    });
}

Tensor detach(const Tensor& a) {
    auto n = make_node(a.shape(), a.data());
    n->op = "detach";
    return Tensor(n);
}

}  // namespace vqseg
