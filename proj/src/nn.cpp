#include "signflow/nn.hpp"

#include <cmath>

namespace signflow {

TensorPtr ParamStore::create(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                             double init_std) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> data(n);
    for (double& v : data) v = rng.normal() * init_std;
    auto t = make_tensor(std::move(shape), std::move(data), true);
    items_.emplace_back(name, t);
    return t;
}

TensorPtr ParamStore::create_zeros(const std::string& name, std::vector<std::size_t> shape) {
    return create_const(name, std::move(shape), 0.0);
}

TensorPtr ParamStore::create_const(const std::string& name, std::vector<std::size_t> shape,
                                   double v) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    auto t = make_tensor(std::move(shape), std::vector<double>(n, v), true);
    items_.emplace_back(name, t);
    return t;
}

std::vector<TensorPtr> ParamStore::tensors() const {
    std::vector<TensorPtr> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
}

TensorPtr ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    return nullptr;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : items_) {
        t->ensure_grad();
        t->zero_grad();
    }
}

Linear::Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng) {
    w = ps.create(name + ".w", {in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    b = ps.create_zeros(name + ".b", {out});
}

TensorPtr Linear::forward(const TensorPtr& x) const { return add(matmul(x, w), b); }

Mlp::Mlp(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
         std::size_t out, Rng& rng)
    : fc1(ps, name + ".fc1", in, hidden, rng), fc2(ps, name + ".fc2", hidden, out, rng) {}

TensorPtr Mlp::forward(const TensorPtr& x) const { return fc2.forward(gelu(fc1.forward(x))); }

AttentionBlock::AttentionBlock(ParamStore& ps, const std::string& name, std::size_t dim,
                               std::size_t heads_, std::size_t mlp_hidden, Rng& rng)
    : heads(heads_),
      wq(ps, name + ".wq", dim, dim, rng),
      wk(ps, name + ".wk", dim, dim, rng),
      wv(ps, name + ".wv", dim, dim, rng),
      wo(ps, name + ".wo", dim, dim, rng),
      fc1(ps, name + ".fc1", dim, mlp_hidden, rng),
      fc2(ps, name + ".fc2", mlp_hidden, dim, rng) {
    if (dim % heads != 0)
        throw ContractError("AttentionBlock: dim " + std::to_string(dim) +
                            " not divisible by heads " + std::to_string(heads));
    ln1_g = ps.create_const(name + ".ln1.g", {dim}, 1.0);
    ln1_b = ps.create_zeros(name + ".ln1.b", {dim});
    ln2_g = ps.create_const(name + ".ln2.g", {dim}, 1.0);
    ln2_b = ps.create_zeros(name + ".ln2.b", {dim});
}

TensorPtr AttentionBlock::forward(const TensorPtr& x, const std::vector<std::uint8_t>* mask) const {
    const std::size_t dim = x->cols();
    const std::size_t hd = dim / heads;
    TensorPtr h = layer_norm(x, ln1_g, ln1_b, 1e-5);
    TensorPtr q = wq.forward(h);
    TensorPtr k = wk.forward(h);
    TensorPtr v = wv.forward(h);
    std::vector<TensorPtr> head_outs;
    head_outs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        head_outs.push_back(scaled_dot_attention(slice_cols(q, i * hd, (i + 1) * hd),
                                                 slice_cols(k, i * hd, (i + 1) * hd),
                                                 slice_cols(v, i * hd, (i + 1) * hd), mask));
    }
    TensorPtr att = wo.forward(heads == 1 ? head_outs[0] : concat_cols(head_outs));
    TensorPtr y = add(x, att);
    TensorPtr m = fc2.forward(gelu(fc1.forward(layer_norm(y, ln2_g, ln2_b, 1e-5))));
    return add(y, m);
}

} // namespace signflow
