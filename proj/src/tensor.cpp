#include "signflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace signflow {

namespace {

constexpr double kMaskBias = -1e30;

std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

bool any_requires(const std::vector<TensorPtr>& ps) {
    for (const auto& p : ps)
        if (p->requires_grad) return true;
    return false;
}

TensorPtr node(std::vector<std::size_t> shape, std::vector<double> data,
               std::vector<TensorPtr> parents) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = any_requires(parents);
    t->parents = std::move(parents);
    return t;
}

void require_2d(const TensorPtr& a, const char* who) {
    if (a->shape.size() != 2)
        throw DimensionError(std::string(who) + ": expected rank-2 tensor, got shape " +
                             shape_str(a->shape));
}

// Broadcast classification for elementwise binary ops.
enum class Bcast { same, row_vector, scalar_rhs };

Bcast classify(const TensorPtr& a, const TensorPtr& b, const char* who) {
    if (a->shape == b->shape) return Bcast::same;
    if (b->is_scalar()) return Bcast::scalar_rhs;
    if (a->shape.size() == 2 && b->shape.size() == 1 && b->shape[0] == a->shape[1])
        return Bcast::row_vector;
    throw DimensionError(std::string(who) + ": shapes do not conform: " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
}

} // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("make_tensor: shape " + shape_str(shape) + " implies " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr scalar(double v) { return make_tensor({1}, {v}); }

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    Bcast mode = classify(a, b, "add");
    std::vector<double> out = a->data;
    const std::size_t n = out.size();
    const std::size_t c = a->cols();
    switch (mode) {
        case Bcast::same:
            for (std::size_t i = 0; i < n; ++i) out[i] += b->data[i];
            break;
        case Bcast::scalar_rhs:
            for (std::size_t i = 0; i < n; ++i) out[i] += b->data[0];
            break;
        case Bcast::row_vector:
            for (std::size_t i = 0; i < n; ++i) out[i] += b->data[i % c];
            break;
    }
    auto t = node(a->shape, std::move(out), {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, mode, c]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                switch (mode) {
                    case Bcast::same:
                        for (std::size_t i = 0; i < self->grad.size(); ++i)
                            b->grad[i] += self->grad[i];
                        break;
                    case Bcast::scalar_rhs:
                        for (double g : self->grad) b->grad[0] += g;
                        break;
                    case Bcast::row_vector:
                        for (std::size_t i = 0; i < self->grad.size(); ++i)
                            b->grad[i % c] += self->grad[i];
                        break;
                }
            }
        };
    }
    return t;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    Bcast mode = classify(a, b, "sub");
    std::vector<double> out = a->data;
    const std::size_t n = out.size();
    const std::size_t c = a->cols();
    switch (mode) {
        case Bcast::same:
            for (std::size_t i = 0; i < n; ++i) out[i] -= b->data[i];
            break;
        case Bcast::scalar_rhs:
            for (std::size_t i = 0; i < n; ++i) out[i] -= b->data[0];
            break;
        case Bcast::row_vector:
            for (std::size_t i = 0; i < n; ++i) out[i] -= b->data[i % c];
            break;
    }
    auto t = node(a->shape, std::move(out), {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, mode, c]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                switch (mode) {
                    case Bcast::same:
                        for (std::size_t i = 0; i < self->grad.size(); ++i)
                            b->grad[i] -= self->grad[i];
                        break;
                    case Bcast::scalar_rhs:
                        for (double g : self->grad) b->grad[0] -= g;
                        break;
                    case Bcast::row_vector:
                        for (std::size_t i = 0; i < self->grad.size(); ++i)
                            b->grad[i % c] -= self->grad[i];
                        break;
                }
            }
        };
    }
    return t;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    Bcast mode = classify(a, b, "mul");
    std::vector<double> out = a->data;
    const std::size_t n = out.size();
    const std::size_t c = a->cols();
    switch (mode) {
        case Bcast::same:
            for (std::size_t i = 0; i < n; ++i) out[i] *= b->data[i];
            break;
        case Bcast::scalar_rhs:
            for (std::size_t i = 0; i < n; ++i) out[i] *= b->data[0];
            break;
        case Bcast::row_vector:
            for (std::size_t i = 0; i < n; ++i) out[i] *= b->data[i % c];
            break;
    }
    auto t = node(a->shape, std::move(out), {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, mode, c]() {
            const std::size_t n = self->grad.size();
            if (a->requires_grad) {
                a->ensure_grad();
                switch (mode) {
                    case Bcast::same:
                        for (std::size_t i = 0; i < n; ++i)
                            a->grad[i] += self->grad[i] * b->data[i];
                        break;
                    case Bcast::scalar_rhs:
                        for (std::size_t i = 0; i < n; ++i)
                            a->grad[i] += self->grad[i] * b->data[0];
                        break;
                    case Bcast::row_vector:
                        for (std::size_t i = 0; i < n; ++i)
                            a->grad[i] += self->grad[i] * b->data[i % c];
                        break;
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                switch (mode) {
                    case Bcast::same:
                        for (std::size_t i = 0; i < n; ++i)
                            b->grad[i] += self->grad[i] * a->data[i];
                        break;
                    case Bcast::scalar_rhs:
                        for (std::size_t i = 0; i < n; ++i)
                            b->grad[0] += self->grad[i] * a->data[i];
                        break;
                    case Bcast::row_vector:
                        for (std::size_t i = 0; i < n; ++i)
                            b->grad[i % c] += self->grad[i] * a->data[i];
                        break;
                }
            }
        };
    }
    return t;
}

TensorPtr scale(const TensorPtr& a, double cfac) {
    std::vector<double> out = a->data;
    for (double& x : out) x *= cfac;
    auto t = node(a->shape, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, cfac]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                a->grad[i] += cfac * self->grad[i];
        };
    }
    return t;
}

namespace {

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
            std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = B + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* brow = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = C + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a->shape[1] != b->shape[0])
        throw DimensionError("matmul: inner dimensions do not match: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> out(m * n, 0.0);
    mm_acc(a->data.data(), b->data.data(), out.data(), m, k, n);
    auto t = node({m, n}, std::move(out), {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, m, k, n]() {
            if (a->requires_grad) {
                a->ensure_grad();
                mm_nt_acc(self->grad.data(), b->data.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                mm_tn_acc(a->data.data(), self->grad.data(), b->grad.data(), m, k, n);
            }
        };
    }
    return t;
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a->shape[1] != b->shape[1])
        throw DimensionError("matmul_nt: key dimensions do not match: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    std::vector<double> out(m * n, 0.0);
    mm_nt_acc(a->data.data(), b->data.data(), out.data(), m, k, n);
    auto t = node({m, n}, std::move(out), {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, m, k, n]() {
            if (a->requires_grad) {
                a->ensure_grad();
                mm_acc(self->grad.data(), b->data.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                mm_tn_acc(self->grad.data(), a->data.data(), b->grad.data(), m, n, k);
            }
        };
    }
    return t;
}

TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != a->size())
        throw DimensionError("reshape: " + shape_str(a->shape) + " -> " + shape_str(shape) +
                             " changes element count");
    auto t = node(std::move(shape), a->data, {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
        };
    }
    return t;
}

TensorPtr slice_rows(const TensorPtr& a, std::size_t r0, std::size_t r1) {
    require_2d(a, "slice_rows");
    if (r0 >= r1 || r1 > a->shape[0])
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") invalid for shape " + shape_str(a->shape));
    const std::size_t c = a->shape[1];
    std::vector<double> out(a->data.begin() + static_cast<std::ptrdiff_t>(r0 * c),
                            a->data.begin() + static_cast<std::ptrdiff_t>(r1 * c));
    auto t = node({r1 - r0, c}, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, r0, c]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                a->grad[r0 * c + i] += self->grad[i];
        };
    }
    return t;
}

TensorPtr slice_cols(const TensorPtr& a, std::size_t c0, std::size_t c1) {
    require_2d(a, "slice_cols");
    if (c0 >= c1 || c1 > a->shape[1])
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") invalid for shape " + shape_str(a->shape));
    const std::size_t r = a->shape[0], c = a->shape[1], w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a->data[i * c + c0 + j];
    auto t = node({r, w}, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, r, c, c0, w]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    a->grad[i * c + c0 + j] += self->grad[i * w + j];
        };
    }
    return t;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    const std::size_t c = parts[0]->cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p->shape[1] != c)
            throw DimensionError("concat_rows: column mismatch: " + shape_str(parts[0]->shape) +
                                 " vs " + shape_str(p->shape));
        r += p->shape[0];
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
    auto t = node({r, c}, std::move(out), parts);
    if (t->requires_grad) {
        Tensor* self = t.get();
        auto ps = parts;
        t->backward_fn = [self, ps]() {
            std::size_t off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->size(); ++i)
                        p->grad[i] += self->grad[off + i];
                }
                off += p->size();
            }
        };
    }
    return t;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const std::size_t r = parts[0]->rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->shape[0] != r)
            throw DimensionError("concat_cols: row mismatch: " + shape_str(parts[0]->shape) +
                                 " vs " + shape_str(p->shape));
        c += p->shape[1];
    }
    std::vector<double> out(r * c);
    std::size_t coff = 0;
    for (const auto& p : parts) {
        const std::size_t w = p->shape[1];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * c + coff + j] = p->data[i * w + j];
        coff += w;
    }
    auto t = node({r, c}, std::move(out), parts);
    if (t->requires_grad) {
        Tensor* self = t.get();
        auto ps = parts;
        t->backward_fn = [self, ps, r, c]() {
            std::size_t coff = 0;
            for (const auto& p : ps) {
                const std::size_t w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            p->grad[i * w + j] += self->grad[i * c + coff + j];
                }
                coff += w;
            }
        };
    }
    return t;
}

TensorPtr gelu(const TensorPtr& a) {
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a->data[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
    }
    auto t = node(a->shape, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                const double x = a->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
                const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
                a->grad[i] += self->grad[i] * (cdf + x * pdf);
            }
        };
    }
    return t;
}

TensorPtr softmax_rows(const TensorPtr& a) {
    require_2d(a, "softmax_rows");
    const std::size_t r = a->shape[0], c = a->shape[1];
    if (c == 0) throw DimensionError("softmax_rows: empty axis in shape " + shape_str(a->shape));
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = a->data.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(row[j] - mx);
            out[i * c + j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
    }
    auto t = node(a->shape, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, r, c]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = self->data.data() + i * c;
                const double* g = self->grad.data() + i * c;
                double gy = 0.0;
                for (std::size_t j = 0; j < c; ++j) gy += g[j] * y[j];
                for (std::size_t j = 0; j < c; ++j)
                    a->grad[i * c + j] += y[j] * (g[j] - gy);
            }
        };
    }
    return t;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps) {
    require_2d(x, "layer_norm");
    const std::size_t r = x->shape[0], c = x->shape[1];
    if (c == 0) throw DimensionError("layer_norm: last axis has length 0");
    if (gain->size() != c || bias->size() != c)
        throw DimensionError("layer_norm: gain/bias length " + std::to_string(gain->size()) +
                             "/" + std::to_string(bias->size()) + " vs row width " +
                             std::to_string(c));
    std::vector<double> out(r * c);
    std::vector<double> inv_std(r), xhat(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x->data.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * is;
            xhat[i * c + j] = h;
            out[i * c + j] = h * gain->data[j] + bias->data[j];
        }
    }
    auto t = node(x->shape, std::move(out), {x, gain, bias});
    if (t->requires_grad) {
        Tensor* self = t.get();
        auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        t->backward_fn = [self, x, gain, bias, r, c, is, xh]() {
            if (gain->requires_grad) gain->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* g = self->grad.data() + i * c;
                const double* h = xh->data() + i * c;
                if (gain->requires_grad || bias->requires_grad) {
                    for (std::size_t j = 0; j < c; ++j) {
                        if (gain->requires_grad) gain->grad[j] += g[j] * h[j];
                        if (bias->requires_grad) bias->grad[j] += g[j];
                    }
                }
                if (x->requires_grad) {
                    double m1 = 0.0, m2 = 0.0; // means of gain*g and gain*g*xhat
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg = g[j] * gain->data[j];
                        m1 += gg;
                        m2 += gg * h[j];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gg = g[j] * gain->data[j];
                        x->grad[i * c + j] += (gg - m1 - h[j] * m2) * (*is)[i];
                    }
                }
            }
        };
    }
    return t;
}

TensorPtr sum_all(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    auto t = node({1}, {s}, {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a]() {
            a->ensure_grad();
            for (double& g : a->grad) g += self->grad[0];
        };
    }
    return t;
}

TensorPtr mean_all(const TensorPtr& a) {
    if (a->size() == 0) throw DimensionError("mean_all: empty tensor");
    double s = 0.0;
    for (double v : a->data) s += v;
    const double inv = 1.0 / static_cast<double>(a->size());
    auto t = node({1}, {s * inv}, {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, inv]() {
            a->ensure_grad();
            for (double& g : a->grad) g += self->grad[0] * inv;
        };
    }
    return t;
}

TensorPtr mean_rows(const TensorPtr& a) {
    require_2d(a, "mean_rows");
    const std::size_t r = a->shape[0], c = a->shape[1];
    if (r == 0) throw DimensionError("mean_rows: zero rows");
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a->data[i * c + j];
    const double inv = 1.0 / static_cast<double>(r);
    for (double& v : out) v *= inv;
    auto t = node({c}, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, r, c, inv]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    a->grad[i * c + j] += self->grad[j] * inv;
        };
    }
    return t;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw DimensionError("mse: shape mismatch: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    const std::size_t n = a->size();
    if (n == 0) throw DimensionError("mse: empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a->data[i] - b->data[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(n);
    auto t = node({1}, {s * inv}, {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, n, inv]() {
            const double g = self->grad[0];
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double d = 2.0 * inv * (a->data[i] - b->data[i]) * g;
                if (a->requires_grad) a->grad[i] += d;
                if (b->requires_grad) b->grad[i] -= d;
            }
        };
    }
    return t;
}

TensorPtr dot(const TensorPtr& a, const TensorPtr& b) {
    if (a->size() != b->size())
        throw DimensionError("dot: length mismatch: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    double s = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) s += a->data[i] * b->data[i];
    auto t = node({1}, {s}, {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b]() {
            const double g = self->grad[0];
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += g * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += g * a->data[i];
            }
        };
    }
    return t;
}

TensorPtr euclidean_distance(const TensorPtr& a, const TensorPtr& b) {
    if (a->size() != b->size())
        throw ContractError("euclidean_distance: length mismatch: " + shape_str(a->shape) +
                            " vs " + shape_str(b->shape));
    double s = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) {
        const double d = a->data[i] - b->data[i];
        s += d * d;
    }
    const double f = std::sqrt(s);
    auto t = node({1}, {f}, {a, b});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, b, f]() {
            const double g = self->grad[0] / std::max(f, 1e-12);
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (std::size_t i = 0; i < a->size(); ++i) {
                const double d = (a->data[i] - b->data[i]) * g;
                if (a->requires_grad) a->grad[i] += d;
                if (b->requires_grad) b->grad[i] -= d;
            }
        };
    }
    return t;
}

TensorPtr l2_normalize(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v * v;
    const double n = std::sqrt(s);
    if (n < 1e-12) throw ContractError("l2_normalize: zero-norm input");
    const double inv = 1.0 / n;
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * inv;
    auto t = node(a->shape, std::move(out), {a});
    if (t->requires_grad) {
        Tensor* self = t.get();
        t->backward_fn = [self, a, inv]() {
            a->ensure_grad();
            double gy = 0.0;
            for (std::size_t i = 0; i < self->size(); ++i) gy += self->grad[i] * self->data[i];
            for (std::size_t i = 0; i < self->size(); ++i)
                a->grad[i] += (self->grad[i] - self->data[i] * gy) * inv;
        };
    }
    return t;
}

TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<std::size_t>& ids) {
    require_2d(logits, "cross_entropy_rows");
    const std::size_t r = logits->shape[0], c = logits->shape[1];
    if (ids.size() != r)
        throw ContractError("cross_entropy_rows: " + std::to_string(ids.size()) +
                            " targets for " + std::to_string(r) + " rows");
    double loss = 0.0;
    std::vector<double> probs(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        if (ids[i] >= c) throw ContractError("cross_entropy_rows: target id out of range");
        const double* row = logits->data.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(row[j] - mx);
            probs[i * c + j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] *= inv;
        loss -= std::log(std::max(probs[i * c + ids[i]], 1e-300));
    }
    loss /= static_cast<double>(r);
    auto t = node({1}, {loss}, {logits});
    if (t->requires_grad) {
        Tensor* self = t.get();
        auto pb = std::make_shared<std::vector<double>>(std::move(probs));
        auto tg = std::make_shared<std::vector<std::size_t>>(ids);
        t->backward_fn = [self, logits, r, c, pb, tg]() {
            logits->ensure_grad();
            const double g = self->grad[0] / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    double d = (*pb)[i * c + j];
                    if (j == (*tg)[i]) d -= 1.0;
                    logits->grad[i * c + j] += g * d;
                }
        };
    }
    return t;
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
    if (n == 0) throw DimensionError("causal_mask: n must be >= 1");
    std::vector<std::uint8_t> m(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
    return m;
}

TensorPtr scaled_dot_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                               const std::vector<std::uint8_t>* mask) {
    require_2d(q, "scaled_dot_attention");
    require_2d(k, "scaled_dot_attention");
    require_2d(v, "scaled_dot_attention");
    if (q->shape[1] != k->shape[1])
        throw DimensionError("scaled_dot_attention: key width mismatch: " + shape_str(q->shape) +
                             " vs " + shape_str(k->shape));
    if (k->shape[0] != v->shape[0])
        throw DimensionError("scaled_dot_attention: key/value row mismatch: " +
                             shape_str(k->shape) + " vs " + shape_str(v->shape));
    const std::size_t lq = q->shape[0], lk = k->shape[0], dk = q->shape[1];
    if (mask && mask->size() != lq * lk)
        throw DimensionError("scaled_dot_attention: mask size " + std::to_string(mask->size()) +
                             " vs " + std::to_string(lq) + "x" + std::to_string(lk));
    TensorPtr scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (mask) {
        std::vector<double> bias(lq * lk, 0.0);
        for (std::size_t i = 0; i < bias.size(); ++i)
            if (!(*mask)[i]) bias[i] = kMaskBias;
        scores = add(scores, make_tensor({lq, lk}, std::move(bias)));
    }
    return matmul(softmax_rows(scores), v);
}

void backward(const TensorPtr& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (!loss->is_scalar())
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    // Iterative DFS producing nodes in topological order (inputs first).
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    struct Frame {
        Tensor* t;
        std::size_t next;
    };
    std::vector<Frame> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.t->parents.size()) {
            Tensor* p = f.t->parents[f.next++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }
    // Intermediate grads are scratch: only leaves accumulate across calls.
    for (Tensor* t : order)
        if (!t->parents.empty()) t->zero_grad();
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->backward_fn && !t->grad.empty()) t->backward_fn();
    }
}

void adam_step(const std::vector<TensorPtr>& params, OptimizerState& state) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->size(), 0.0);
            state.v[i].assign(params[i]->size(), 0.0);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->grad.size() != params[i]->size())
            throw ContractError("adam_step: parameter #" + std::to_string(i) +
                                " has no gradient");
        if (state.m[i].size() != params[i]->size())
            throw ContractError("adam_step: moment/parameter shape drift at #" +
                                std::to_string(i));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void ema_init(EmaState& state, const std::vector<TensorPtr>& params) {
    state.shadow.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) state.shadow[i] = params[i]->data;
}

void ema_update(EmaState& state, const std::vector<TensorPtr>& params) {
    if (state.shadow.size() != params.size())
        throw ContractError("ema_update: shadow/parameter count drift");
    const double d = state.decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.shadow[i].size() != params[i]->size())
            throw ContractError("ema_update: shadow shape drift at #" + std::to_string(i));
        auto& s = state.shadow[i];
        const auto& live = params[i]->data;
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = d * s[j] + (1.0 - d) * live[j];
    }
}

} // namespace signflow
