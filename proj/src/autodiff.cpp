#include "tgdm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "tgdm/kernels.hpp"
#include "autodiff_internal.hpp"

namespace tgdm::nn {

using detail::wants_grad;
using detail::transpose_rm;

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
VarPtr<T> make_leaf(Tensor<T> value, bool requires_grad, std::string name) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

template <typename T>
VarPtr<T> make_const(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

template <typename T>
bool any_needs_grad(const std::vector<VarPtr<T>>& parents) {
    if (!g_grad_enabled) return false;
    for (const auto& p : parents)
        if (p && wants_grad(p)) return true;
    return false;
}

using detail::make_op;

template <typename T>
void backward(const VarPtr<T>& root) {
    if (root->value.numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root->backward_fn && !root->requires_grad) return;

    // Post-order DFS; reverse gives a topological order (consumers first).
    // Shared ownership is held for the whole sweep because nodes release
    // their parent edges as soon as their backward has run.
    std::vector<VarPtr<T>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<VarPtr<T>, size_t>> stack{{root, 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            const VarPtr<T>& p = node->parents[idx++];
            if (p && !seen.count(p.get()) && (p->backward_fn || p->requires_grad)) {
                seen.insert(p.get());
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad().fill(T(0));
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = it->get();
        if (n->backward_fn) {
            if (n->grad.numel() == n->value.numel()) n->backward_fn();
            // Interior node: value and grad are fully consumed now.
            n->grad = Tensor<T>();
            if (!n->requires_grad) n->value = Tensor<T>();
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
static void check_same_shape(const VarPtr<T>& a, const VarPtr<T>& b, const char* op) {
    if (a->value.shape() != b->value.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a->value.shape_str() + " vs " + b->value.shape_str());
}

template <typename T>
VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    auto node = make_op<T>(std::move(out), {a, b}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, b]() {
            const int64_t n = self->grad.numel();
            if (wants_grad(a)) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i];
            }
            if (wants_grad(b)) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i];
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
    auto node = make_op<T>(std::move(out), {a, b}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, b]() {
            const int64_t n = self->grad.numel();
            if (wants_grad(a)) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i];
            }
            if (wants_grad(b)) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] -= self->grad[i];
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    auto node = make_op<T>(std::move(out), {a, b}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, b]() {
            const int64_t n = self->grad.numel();
            if (wants_grad(a)) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i] * b->value[i];
            }
            if (wants_grad(b)) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i] * a->value[i];
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> scale(const VarPtr<T>& a, T s) {
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
    auto node = make_op<T>(std::move(out), {a}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, s]() {
            auto& g = a->ensure_grad();
            const int64_t n = self->grad.numel();
            for (int64_t i = 0; i < n; ++i) g[i] += self->grad[i] * s;
        };
    }
    return node;
}

namespace {

/// Shared skeleton for unary elementwise ops: fwd(x) and dfdx given (x, y).
template <typename T, typename F, typename DF>
VarPtr<T> unary_op(const VarPtr<T>& a, F f, DF df) {
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = f(a->value[i]);
    auto node = make_op<T>(std::move(out), {a}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, df]() {
            auto& g = a->ensure_grad();
            const int64_t n = self->grad.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i)
                g[i] += self->grad[i] * df(a->value[i], self->value[i]);
        };
    }
    return node;
}

template <typename T>
T sigmoid_scalar(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace

template <typename T>
VarPtr<T> leaky_relu(const VarPtr<T>& a, T slope) {
    return unary_op(
        a, [slope](T x) { return x >= T(0) ? x : slope * x; },
        [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <typename T>
VarPtr<T> silu(const VarPtr<T>& a) {
    return unary_op(
        a, [](T x) { return x * sigmoid_scalar(x); },
        [](T x, T) {
            const T s = sigmoid_scalar(x);
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
VarPtr<T> sigmoid(const VarPtr<T>& a) {
    return unary_op(
        a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
VarPtr<T> softplus(const VarPtr<T>& a) {
    return unary_op(
        a,
        [](T x) {
            // log(1+e^x), overflow-safe
            return x > T(20) ? x : std::log1p(std::exp(x));
        },
        [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
VarPtr<T> exp_op(const VarPtr<T>& a) {
    return unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
VarPtr<T> neg_exp(const VarPtr<T>& a) {
    return unary_op(
        a, [](T x) { return -std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
VarPtr<T> sum_all(const VarPtr<T>& a) {
    T s = T(0);
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) s += a->value[i];
    auto node = make_op<T>(Tensor<T>::scalar(s), {a}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a]() {
            auto& g = a->ensure_grad();
            const T go = self->grad[0];
            const int64_t n = g.numel();
            for (int64_t i = 0; i < n; ++i) g[i] += go;
        };
    }
    return node;
}

template <typename T>
VarPtr<T> mean_all(const VarPtr<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a->value.numel()));
}

template <typename T>
VarPtr<T> add_scalars(const std::vector<VarPtr<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_scalars: empty list");
    T s = T(0);
    for (const auto& x : xs) s += x->value.item();
    auto node = make_op<T>(Tensor<T>::scalar(s), xs, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        auto parents = xs;
        node->backward_fn = [self, parents]() {
            for (const auto& p : parents)
                if (wants_grad(p)) p->ensure_grad()[0] += self->grad[0];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// sequence ops

template <typename T>
VarPtr<T> linear(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
    const auto& xs = x->value.shape();
    if (xs.empty()) throw std::invalid_argument("linear: rank-0 input");
    const int64_t cin = xs.back();
    if (w->value.rank() != 2 || w->value.dim(1) != cin)
        throw std::invalid_argument("linear: weight shape mismatch");
    const int64_t cout = w->value.dim(0);
    const int64_t rows = x->value.numel() / cin;

    std::vector<int64_t> out_shape(xs.begin(), xs.end() - 1);
    out_shape.push_back(cout);
    Tensor<T> out(out_shape);

    // out (rows x cout) = x (rows x cin) . w^T (cin x cout)
    std::vector<T> wt(static_cast<size_t>(cin) * cout);
    transpose_rm(cout, cin, w->value.data(), wt.data());
    kern::gemm<T>(rows, cout, cin, x->value.data(), wt.data(), out.data(), false);
    if (b) {
        if (b->value.numel() != cout) throw std::invalid_argument("linear: bias shape mismatch");
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cout; ++c) out[r * cout + c] += b->value[c];
    }

    std::vector<VarPtr<T>> parents = b ? std::vector<VarPtr<T>>{x, w, b}
                                       : std::vector<VarPtr<T>>{x, w};
    auto node = make_op<T>(std::move(out), parents, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, w, b, rows, cin, cout]() {
            const T* gy = self->grad.data();
            if (wants_grad(x)) {
                // dx = gy (rows x cout) . w (cout x cin)
                auto& gx = x->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(rows) * cin, T(0));
                kern::gemm<T>(rows, cin, cout, gy, w->value.data(), tmp.data(), false);
                for (int64_t i = 0; i < rows * cin; ++i) gx[i] += tmp[i];
            }
            if (wants_grad(w)) {
                // dw = gy^T (cout x rows) . x (rows x cin)
                auto& gw = w->ensure_grad();
                std::vector<T> gyt(static_cast<size_t>(cout) * rows);
                transpose_rm(rows, cout, gy, gyt.data());
                kern::gemm<T>(cout, cin, rows, gyt.data(), x->value.data(), gw.data(), true);
            }
            if (b && wants_grad(b)) {
                auto& gb = b->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cout; ++c) gb[c] += gy[r * cout + c];
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> dwconv1d_causal(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
    const auto& xs = x->value.shape();
    if (xs.size() != 3) throw std::invalid_argument("dwconv1d_causal: expect (B,L,C)");
    const int64_t B = xs[0], L = xs[1], C = xs[2];
    if (w->value.rank() != 2 || w->value.dim(0) != C)
        throw std::invalid_argument("dwconv1d_causal: weight shape mismatch");
    const int64_t k = w->value.dim(1);

    Tensor<T> out(xs);
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t l = 0; l < L; ++l)
            for (int64_t c = 0; c < C; ++c) {
                T acc = b ? b->value[c] : T(0);
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t src = l - (k - 1) + j;
                    if (src >= 0) acc += w->value[c * k + j] * x->value[(bi * L + src) * C + c];
                }
                out[(bi * L + l) * C + c] = acc;
            }

    std::vector<VarPtr<T>> parents = b ? std::vector<VarPtr<T>>{x, w, b}
                                       : std::vector<VarPtr<T>>{x, w};
    auto node = make_op<T>(std::move(out), parents, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, w, b, B, L, C, k]() {
            const T* gy = self->grad.data();
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t l = 0; l < L; ++l)
                    for (int64_t c = 0; c < C; ++c) {
                        const T g = gy[(bi * L + l) * C + c];
                        for (int64_t j = 0; j < k; ++j) {
                            const int64_t src = l - (k - 1) + j;
                            if (src < 0) continue;
                            if (wants_grad(x))
                                x->ensure_grad()[(bi * L + src) * C + c] +=
                                    g * w->value[c * k + j];
                            if (wants_grad(w))
                                w->ensure_grad()[c * k + j] +=
                                    g * x->value[(bi * L + src) * C + c];
                        }
                        if (b && wants_grad(b)) b->ensure_grad()[c] += g;
                    }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> concat_last(const VarPtr<T>& a, const VarPtr<T>& b) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    if (as.size() != bs.size())
        throw std::invalid_argument("concat_last: rank mismatch");
    for (size_t i = 0; i + 1 < as.size(); ++i)
        if (as[i] != bs[i]) throw std::invalid_argument("concat_last: leading dims mismatch");
    const int64_t ca = as.back(), cb = bs.back();
    const int64_t rows = a->value.numel() / ca;
    std::vector<int64_t> out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(ca + cb);
    Tensor<T> out(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        std::copy_n(a->value.data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(b->value.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    auto node = make_op<T>(std::move(out), {a, b}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, a, b, rows, ca, cb]() {
            const T* gy = self->grad.data();
            if (wants_grad(a)) {
                auto& g = a->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < ca; ++c) g[r * ca + c] += gy[r * (ca + cb) + c];
            }
            if (wants_grad(b)) {
                auto& g = b->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cb; ++c) g[r * cb + c] += gy[r * (ca + cb) + ca + c];
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> slice_last(const VarPtr<T>& x, int64_t from, int64_t to) {
    const auto& xs = x->value.shape();
    const int64_t c = xs.back();
    if (from < 0 || to > c || from >= to) throw std::invalid_argument("slice_last: bad range");
    const int64_t rows = x->value.numel() / c;
    const int64_t cw = to - from;
    std::vector<int64_t> out_shape(xs.begin(), xs.end() - 1);
    out_shape.push_back(cw);
    Tensor<T> out(out_shape);
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(x->value.data() + r * c + from, cw, out.data() + r * cw);
    auto node = make_op<T>(std::move(out), {x}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, rows, c, cw, from]() {
            auto& g = x->ensure_grad();
            const T* gy = self->grad.data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < cw; ++j) g[r * c + from + j] += gy[r * cw + j];
        };
    }
    return node;
}

template <typename T>
static VarPtr<T> transpose_last2(const VarPtr<T>& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 3) throw std::invalid_argument("transpose: expect rank 3");
    const int64_t B = xs[0], P = xs[1], Q = xs[2];
    Tensor<T> out({B, Q, P});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < P; ++p)
            for (int64_t q = 0; q < Q; ++q)
                out[(b * Q + q) * P + p] = x->value[(b * P + p) * Q + q];
    auto node = make_op<T>(std::move(out), {x}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, B, P, Q]() {
            auto& g = x->ensure_grad();
            const T* gy = self->grad.data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t p = 0; p < P; ++p)
                    for (int64_t q = 0; q < Q; ++q)
                        g[(b * P + p) * Q + q] += gy[(b * Q + q) * P + p];
        };
    }
    return node;
}

template <typename T>
VarPtr<T> transpose_cl(const VarPtr<T>& x) {
    return transpose_last2(x);
}

template <typename T>
VarPtr<T> transpose_lc(const VarPtr<T>& x) {
    return transpose_last2(x);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(std::vector<VarPtr<T>> params, T lr, T beta1, T beta2, T eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        if (p->grad.numel() != p->value.numel()) continue;  // unused this step
        const int64_t n = p->value.numel();
        T* w = p->value.data();
        const T* g = p->grad.data();
        T* m = m_[pi].data();
        T* v = v_[pi].data();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
            const T mh = m[i] / bc1;
            const T vh = v[i] / bc2;
            w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p->grad = Tensor<T>();
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define TGDM_INSTANTIATE(T)                                                                   \
    template VarPtr<T> make_leaf<T>(Tensor<T>, bool, std::string);                           \
    template VarPtr<T> make_const<T>(Tensor<T>);                                             \
    template bool any_needs_grad<T>(const std::vector<VarPtr<T>>&);                          \
    template void backward<T>(const VarPtr<T>&);                                             \
    template VarPtr<T> add<T>(const VarPtr<T>&, const VarPtr<T>&);                           \
    template VarPtr<T> sub<T>(const VarPtr<T>&, const VarPtr<T>&);                           \
    template VarPtr<T> mul<T>(const VarPtr<T>&, const VarPtr<T>&);                           \
    template VarPtr<T> scale<T>(const VarPtr<T>&, T);                                        \
    template VarPtr<T> leaky_relu<T>(const VarPtr<T>&, T);                                   \
    template VarPtr<T> silu<T>(const VarPtr<T>&);                                            \
    template VarPtr<T> sigmoid<T>(const VarPtr<T>&);                                         \
    template VarPtr<T> softplus<T>(const VarPtr<T>&);                                        \
    template VarPtr<T> exp_op<T>(const VarPtr<T>&);                                          \
    template VarPtr<T> neg_exp<T>(const VarPtr<T>&);                                         \
    template VarPtr<T> sum_all<T>(const VarPtr<T>&);                                         \
    template VarPtr<T> mean_all<T>(const VarPtr<T>&);                                        \
    template VarPtr<T> add_scalars<T>(const std::vector<VarPtr<T>>&);                        \
    template VarPtr<T> linear<T>(const VarPtr<T>&, const VarPtr<T>&, const VarPtr<T>&);      \
    template VarPtr<T> dwconv1d_causal<T>(const VarPtr<T>&, const VarPtr<T>&,                \
                                          const VarPtr<T>&);                                 \
    template VarPtr<T> concat_last<T>(const VarPtr<T>&, const VarPtr<T>&);                   \
    template VarPtr<T> slice_last<T>(const VarPtr<T>&, int64_t, int64_t);                    \
    template VarPtr<T> transpose_cl<T>(const VarPtr<T>&);                                    \
    template VarPtr<T> transpose_lc<T>(const VarPtr<T>&);                                    \
    template class Adam<T>;

TGDM_INSTANTIATE(float)
TGDM_INSTANTIATE(double)
#undef TGDM_INSTANTIATE

}  // namespace tgdm::nn
