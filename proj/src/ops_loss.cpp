#include <cmath>
#include <limits>
#include <stdexcept>

#include "autodiff_internal.hpp"
#include "tgdm/autodiff.hpp"

namespace tgdm::nn {

using detail::make_op;
using detail::wants_grad;

namespace {

template <typename T>
void check_logits_labels(const VarPtr<T>& logits, const Tensor<int32_t>& labels,
                         const char* op) {
    const auto& ls = logits->value.shape();
    if (ls.size() != 5) throw std::invalid_argument(std::string(op) + ": logits not 5-D");
    const auto& ys = labels.shape();
    if (ys.size() != 4 || ys[0] != ls[0] || ys[1] != ls[2] || ys[2] != ls[3] || ys[3] != ls[4])
        throw std::invalid_argument(std::string(op) + ": labels shape mismatch");
    const int32_t K = static_cast<int32_t>(ls[1]);
    for (int64_t i = 0; i < labels.numel(); ++i)
        if (labels[i] < 0 || labels[i] >= K)
            throw std::invalid_argument(std::string(op) + ": label out of range");
}

}  // namespace

template <typename T>
VarPtr<T> ce_loss(const VarPtr<T>& logits, const Tensor<int32_t>& labels) {
    check_logits_labels(logits, labels, "ce_loss");
    const auto& ls = logits->value.shape();
    const int64_t B = ls[0], K = ls[1], vol = ls[2] * ls[3] * ls[4];

    double total = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : total)
    for (int64_t b = 0; b < B; ++b) {
        const T* lb = logits->value.data() + b * K * vol;
        double acc = 0.0;
        for (int64_t v = 0; v < vol; ++v) {
            T mx = lb[v];
            for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lb[k * vol + v]);
            double se = 0.0;
            for (int64_t k = 0; k < K; ++k) se += std::exp(static_cast<double>(lb[k * vol + v] - mx));
            const int32_t y = labels[b * vol + v];
            acc += std::log(se) + static_cast<double>(mx) - static_cast<double>(lb[y * vol + v]);
        }
        total += acc;
    }
    const T loss = static_cast<T>(total / static_cast<double>(B * vol));

    auto node = make_op<T>(Tensor<T>::scalar(loss), {logits}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        auto labels_copy = std::make_shared<Tensor<int32_t>>(labels);
        node->backward_fn = [self, logits, labels_copy, B, K, vol]() {
            const T g = self->grad[0] / static_cast<T>(B * vol);
            auto& gx = logits->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t b = 0; b < B; ++b) {
                const T* lb = logits->value.data() + b * K * vol;
                T* gb = gx.data() + b * K * vol;
                for (int64_t v = 0; v < vol; ++v) {
                    T mx = lb[v];
                    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lb[k * vol + v]);
                    T se = T(0);
                    for (int64_t k = 0; k < K; ++k) se += std::exp(lb[k * vol + v] - mx);
                    const int32_t y = (*labels_copy)[b * vol + v];
                    for (int64_t k = 0; k < K; ++k) {
                        const T p = std::exp(lb[k * vol + v] - mx) / se;
                        gb[k * vol + v] += g * (p - (k == y ? T(1) : T(0)));
                    }
                }
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> dice_loss(const VarPtr<T>& logits, const Tensor<int32_t>& labels, T eps) {
    check_logits_labels(logits, labels, "dice_loss");
    const auto& ls = logits->value.shape();
    const int64_t B = ls[0], K = ls[1], vol = ls[2] * ls[3] * ls[4];
    if (K < 2) throw std::invalid_argument("dice_loss: need at least 2 classes");

    // Class-wise sums of softmax probabilities and one-hot targets, pooled
    // over batch and space; foreground classes only.
    std::vector<double> sum_p(K, 0.0), sum_g(K, 0.0), sum_pg(K, 0.0);
    for (int64_t b = 0; b < B; ++b) {
        const T* lb = logits->value.data() + b * K * vol;
        for (int64_t v = 0; v < vol; ++v) {
            T mx = lb[v];
            for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lb[k * vol + v]);
            double se = 0.0;
            for (int64_t k = 0; k < K; ++k) se += std::exp(static_cast<double>(lb[k * vol + v] - mx));
            const int32_t y = labels[b * vol + v];
            for (int64_t k = 0; k < K; ++k) {
                const double p = std::exp(static_cast<double>(lb[k * vol + v] - mx)) / se;
                sum_p[k] += p;
                if (k == y) {
                    sum_g[k] += 1.0;
                    sum_pg[k] += p;
                }
            }
        }
    }
    const int64_t n_fg = K - 1;
    double dice_mean = 0.0;
    for (int64_t k = 1; k < K; ++k)
        dice_mean += (2.0 * sum_pg[k] + eps) / (sum_p[k] + sum_g[k] + eps);
    dice_mean /= static_cast<double>(n_fg);
    const T loss = static_cast<T>(1.0 - dice_mean);

    auto node = make_op<T>(Tensor<T>::scalar(loss), {logits}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        auto labels_copy = std::make_shared<Tensor<int32_t>>(labels);
        auto sums = std::make_shared<std::vector<double>>();
        sums->insert(sums->end(), sum_p.begin(), sum_p.end());
        sums->insert(sums->end(), sum_g.begin(), sum_g.end());
        sums->insert(sums->end(), sum_pg.begin(), sum_pg.end());
        node->backward_fn = [self, logits, labels_copy, sums, B, K, vol, n_fg, eps]() {
            const T g0 = self->grad[0];
            const double* sp = sums->data();
            const double* sg = sums->data() + K;
            const double* spg = sums->data() + 2 * K;
            // dL/d p_{k,v} is affine in the per-class sums.
            std::vector<double> coef_pg(K, 0.0), coef_p(K, 0.0);
            for (int64_t k = 1; k < K; ++k) {
                const double den = sp[k] + sg[k] + eps;
                // d dice_k / d sum_pg = 2/den ; d dice_k / d sum_p = -(2 spg + eps)/den^2
                coef_pg[k] = 2.0 / den;
                coef_p[k] = -(2.0 * spg[k] + eps) / (den * den);
            }
            auto& gx = logits->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int64_t b = 0; b < B; ++b) {
                const T* lb = logits->value.data() + b * K * vol;
                T* gb = gx.data() + b * K * vol;
                std::vector<double> p(K), dldp(K);
                for (int64_t v = 0; v < vol; ++v) {
                    T mx = lb[v];
                    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lb[k * vol + v]);
                    double se = 0.0;
                    for (int64_t k = 0; k < K; ++k) {
                        p[k] = std::exp(static_cast<double>(lb[k * vol + v] - mx));
                        se += p[k];
                    }
                    const int32_t y = (*labels_copy)[b * vol + v];
                    double dot = 0.0;
                    for (int64_t k = 0; k < K; ++k) {
                        p[k] /= se;
                        double d = 0.0;
                        if (k >= 1) {
                            d = coef_p[k];
                            if (k == y) d += coef_pg[k];
                            d *= -1.0 / static_cast<double>(n_fg);  // loss = 1 - mean dice
                        }
                        dldp[k] = d;
                        dot += d * p[k];
                    }
                    for (int64_t k = 0; k < K; ++k)
                        gb[k * vol + v] +=
                            g0 * static_cast<T>(p[k] * (dldp[k] - dot));
                }
            }
        };
    }
    return node;
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
    if (n <= 0) return {};
    if (static_cast<int>(cost.size()) != n * n)
        throw std::invalid_argument("solve_assignment: cost must be n*n");
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

template <typename T>
VarPtr<T> match_loss_op(const VarPtr<T>& pred, const Tensor<T>& gt) {
    const auto& ps = pred->value.shape();
    if (ps.size() != 3 || ps[2] != 3)
        throw std::invalid_argument("match_loss: pred must be (B,N,3)");
    if (gt.shape() != ps)
        throw std::invalid_argument("match_loss: point count mismatch between pred and gt");
    const int64_t B = ps[0], N = ps[1];

    auto assign = std::make_shared<std::vector<int>>(static_cast<size_t>(B) * N);
    double total = 0.0;
    std::vector<double> cost(static_cast<size_t>(N) * N);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < N; ++j) {
                double s = 0.0;
                for (int64_t d = 0; d < 3; ++d) {
                    const double diff = static_cast<double>(pred->value[(b * N + i) * 3 + d]) -
                                        static_cast<double>(gt[(b * N + j) * 3 + d]);
                    s += diff * diff;
                }
                cost[i * N + j] = std::sqrt(s);
            }
        auto row_to_col = solve_assignment(cost, static_cast<int>(N));
        for (int64_t i = 0; i < N; ++i) {
            (*assign)[b * N + i] = row_to_col[i];
            total += cost[i * N + row_to_col[i]];
        }
    }

    auto node = make_op<T>(Tensor<T>::scalar(static_cast<T>(total)), {pred}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        auto gt_copy = std::make_shared<Tensor<T>>(gt);
        node->backward_fn = [self, pred, gt_copy, assign, B, N]() {
            const T g = self->grad[0];
            auto& gp = pred->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < N; ++i) {
                    const int64_t j = (*assign)[b * N + i];
                    double dist = 0.0;
                    double diff[3];
                    for (int64_t d = 0; d < 3; ++d) {
                        diff[d] = static_cast<double>(pred->value[(b * N + i) * 3 + d]) -
                                  static_cast<double>((*gt_copy)[(b * N + j) * 3 + d]);
                        dist += diff[d] * diff[d];
                    }
                    dist = std::sqrt(dist);
                    if (dist < 1e-12) continue;  // subgradient 0 at coincident points
                    for (int64_t d = 0; d < 3; ++d)
                        gp[(b * N + i) * 3 + d] += g * static_cast<T>(diff[d] / dist);
                }
        };
    }
    return node;
}

#define TGDM_INSTANTIATE(T)                                                              \
    template VarPtr<T> ce_loss<T>(const VarPtr<T>&, const Tensor<int32_t>&);             \
    template VarPtr<T> dice_loss<T>(const VarPtr<T>&, const Tensor<int32_t>&, T);        \
    template VarPtr<T> match_loss_op<T>(const VarPtr<T>&, const Tensor<T>&);

TGDM_INSTANTIATE(float)
TGDM_INSTANTIATE(double)
#undef TGDM_INSTANTIATE

}  // namespace tgdm::nn
