#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqseg {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    int64_t seq = -1;  // creation order, drives backward scheduling
    std::string op;    // empty for leaves
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    bool backward_done = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

// Value-semantic handle to a node in the implicit tape. Graph construction is
// single-threaded; once a node's data is written by its producing op it is
// never mutated (optimizer updates touch only leaf parameters between steps).
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
    const std::vector<float>& data() const { return node_->data; }
    std::vector<float>& mutable_data() { return node_->data; }
    const std::vector<float>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    float item() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

    void zero_grad() {
        if (node_) {
            node_->grad.assign(node_->data.size(), 0.0f);
            node_->backward_done = false;
        }
    }

  private:
    std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Visits reachable nodes in
// exact reverse creation order. Calling twice on the same loss without a reset
// is an error.
void backward(const Tensor& loss);

// Returns the name of the first op (in creation order, among nodes reachable
// from t) whose output contains a NaN/Inf, or empty string if all finite.
std::string first_nonfinite_op(const Tensor& t);

bool all_finite(const Tensor& t);

// ---- primitive ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // same shape, or b scalar
Tensor scale(const Tensor& a, float s);
Tensor add_const(const Tensor& a, float c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);   // -> scalar, accumulated in double
Tensor mean(const Tensor& a);  // -> scalar

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

Tensor swish(const Tensor& a);

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor add_channel_bias(const Tensor& input, const Tensor& bias);  // NCHW + [C]

Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps);

Tensor softmax_channels(const Tensor& input);      // NCHW, over C
Tensor log_softmax_channels(const Tensor& input);  // NCHW, over C

Tensor upsample_nearest2(const Tensor& input);              // NCHW -> N,C,2H,2W
Tensor concat_channels(const Tensor& a, const Tensor& b);   // NCHW along C

// Forward value equals `quantised`; backward copies the incoming gradient
// unchanged onto `encoder_out` and sends nothing into `quantised`.
Tensor straight_through(const Tensor& encoder_out, const Tensor& quantised);

// rows[i] = table[indices[i]]; gradient scatters back into the table.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

// [N,C,H,W] -> [N*H*W, C] with row order (n, h, w); exact inverse below.
Tensor nchw_to_rows(const Tensor& input);
Tensor rows_to_nchw(const Tensor& rows, int n, int c, int h, int w);

// Same data, cut loose from the graph; no gradient flows through it.
Tensor detach(const Tensor& a);

}  // namespace vqseg
