#pragma once

// Shared helpers for the autodiff op translation units. Not installed.

#include <algorithm>
#include <functional>
#include <vector>

#include "tgdm/autodiff.hpp"

namespace tgdm::nn::detail {

template <typename T>
inline bool wants_grad(const VarPtr<T>& n) {
    return n->requires_grad || n->needs_grad;
}

template <typename T>
inline VarPtr<T> make_op(Tensor<T> value, std::vector<VarPtr<T>> parents,
                         std::function<void()> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->needs_grad = any_needs_grad(parents);
    if (n->needs_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

template <typename T>
inline void transpose_rm(int64_t rows, int64_t cols, const T* src, T* dst) {
    constexpr int64_t kB = 32;
    for (int64_t i0 = 0; i0 < rows; i0 += kB)
        for (int64_t j0 = 0; j0 < cols; j0 += kB) {
            const int64_t i1 = std::min(rows, i0 + kB), j1 = std::min(cols, j0 + kB);
            for (int64_t i = i0; i < i1; ++i)
                for (int64_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
        }
}

}  // namespace tgdm::nn::detail
