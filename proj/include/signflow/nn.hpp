#pragma once

#include <string>
#include <utility>
#include <vector>

#include "signflow/rng.hpp"
#include "signflow/tensor.hpp"

namespace signflow {

// Ordered, named collection of trainable tensors. The order is the creation
// order and is what the optimizer, EMA and checkpoints iterate over, so two
// models built the same way line up entry for entry.
class ParamStore {
public:
    TensorPtr create(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                     double init_std);
    TensorPtr create_zeros(const std::string& name, std::vector<std::size_t> shape);
    TensorPtr create_const(const std::string& name, std::vector<std::size_t> shape, double v);

    const std::vector<std::pair<std::string, TensorPtr>>& items() const { return items_; }
    std::vector<TensorPtr> tensors() const;
    TensorPtr find(const std::string& name) const; // nullptr when absent
    void zero_grads();

private:
    std::vector<std::pair<std::string, TensorPtr>> items_;
};

struct Linear {
    TensorPtr w; // [in, out]
    TensorPtr b; // [out]

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const; // [r,in] -> [r,out]
    std::size_t in_dim() const { return w ? w->shape[0] : 0; }
};

// Two-layer perceptron with a GELU in between.
struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
        std::size_t out, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;
};

// Pre-norm transformer block: x += MHA(LN(x)); x += MLP(LN(x)).
// Per-position layer norm keeps masked attention the only cross-position path,
// which is what makes the causal-independence property exact.
struct AttentionBlock {
    std::size_t heads = 1;
    TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
    Linear wq, wk, wv, wo;
    Linear fc1, fc2;

    AttentionBlock() = default;
    AttentionBlock(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                   std::size_t mlp_hidden, Rng& rng);
    TensorPtr forward(const TensorPtr& x, const std::vector<std::uint8_t>* mask) const;
};

} // namespace signflow
