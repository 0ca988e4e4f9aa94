#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace signflow {

// Error taxonomy shared across the library.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Reverse-mode autodiff node. Each operation allocates a fresh node holding
// the forward value, references to its inputs and a closure that scatters the
// node's gradient into its parents. backward() replays the closures in reverse
// topological order, so the parent graph doubles as the recording tape.
//
// Rank is at most 2 in practice: embeddings are {d}, sequences are {rows, cols}.
struct Tensor : std::enable_shared_from_this<Tensor> {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // same length as data once touched
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn; // may be empty for leaves

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }
    bool is_scalar() const { return data.size() == 1; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

std::string shape_str(const std::vector<std::size_t>& s);

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr scalar(double v);

// ---- elementwise / linear algebra ----
// add/sub/mul accept equal shapes, or b as a length-cols row vector
// broadcast over the rows of a, or b scalar.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);    // [m,k]x[k,n]
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b); // [m,k]x[n,k]^T -> [m,n]

// ---- shape ops ----
TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> shape);
TensorPtr slice_rows(const TensorPtr& a, std::size_t r0, std::size_t r1);
TensorPtr slice_cols(const TensorPtr& a, std::size_t c0, std::size_t c1);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);

// ---- nonlinearities / reductions ----
TensorPtr gelu(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& a); // last (column) axis of a 2-D tensor
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps);
TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);
TensorPtr mean_rows(const TensorPtr& a); // [r,c] -> [c]
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);
TensorPtr dot(const TensorPtr& a, const TensorPtr& b);
TensorPtr euclidean_distance(const TensorPtr& a, const TensorPtr& b);
TensorPtr l2_normalize(const TensorPtr& a);
// mean over rows of -log softmax(x)[r, id_r]; ids values must be < cols
TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<std::size_t>& ids);

// Masked scaled dot-product attention. mask, when present, is row-major
// len_q x len_k; blocked positions receive a large negative bias before the
// row softmax.
TensorPtr scaled_dot_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                               const std::vector<std::uint8_t>* mask = nullptr);

// Causal mask: entry (i,j) true (allowed) iff j <= i. Row-major n x n.
std::vector<std::uint8_t> causal_mask(std::size_t n);

// Reverse pass from a scalar loss. Accumulates into .grad of every
// requires_grad tensor reachable through the parent links.
void backward(const TensorPtr& loss);

// ---- optimizer / EMA ----
struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m; // aligned with the parameter list
    std::vector<std::vector<double>> v;
};

// Bias-corrected adaptive-moment update over an ordered parameter list.
// Every parameter must carry an allocated gradient.
void adam_step(const std::vector<TensorPtr>& params, OptimizerState& state);

struct EmaState {
    double decay = 0.999;
    std::vector<std::vector<double>> shadow;
};

void ema_init(EmaState& state, const std::vector<TensorPtr>& params);
void ema_update(EmaState& state, const std::vector<TensorPtr>& params);

} // namespace signflow
