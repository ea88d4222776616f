#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tgdm/tensor.hpp"

namespace tgdm::nn {

/// Reverse-mode autodiff on an eagerly built tape. Ops are coarse-grained
/// (whole-volume convolutions, fused scans) so graph overhead stays small.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;  // trainable leaf
    bool needs_grad = false;     // some ancestor is trainable
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void()> backward_fn;  // nullptr for leaves/constants
    std::string name;

    Tensor<T>& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
using VarPtr = std::shared_ptr<Node<T>>;

/// Thread-local switch: when disabled, ops skip tape construction entirely.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <typename T>
VarPtr<T> make_leaf(Tensor<T> value, bool requires_grad = true, std::string name = {});

template <typename T>
VarPtr<T> make_const(Tensor<T> value);

/// Propagate whether a node's subgraph needs gradients; used by every op.
template <typename T>
bool any_needs_grad(const std::vector<VarPtr<T>>& parents);

/// Run reverse-mode accumulation from a scalar root. Frees intermediate
/// values and gradients as soon as they are consumed.
template <typename T>
void backward(const VarPtr<T>& root);

// ---- elementwise & reductions ------------------------------------------

template <typename T> VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T> VarPtr<T> scale(const VarPtr<T>& a, T s);
template <typename T> VarPtr<T> leaky_relu(const VarPtr<T>& a, T slope);
template <typename T> VarPtr<T> silu(const VarPtr<T>& a);
template <typename T> VarPtr<T> sigmoid(const VarPtr<T>& a);
template <typename T> VarPtr<T> softplus(const VarPtr<T>& a);
template <typename T> VarPtr<T> exp_op(const VarPtr<T>& a);
template <typename T> VarPtr<T> neg_exp(const VarPtr<T>& a);  // -exp(a)
template <typename T> VarPtr<T> sum_all(const VarPtr<T>& a);
template <typename T> VarPtr<T> mean_all(const VarPtr<T>& a);
template <typename T> VarPtr<T> add_scalars(const std::vector<VarPtr<T>>& xs);

// ---- sequence ops, shapes (B, L, C) unless noted -------------------------

/// y[..., co] = sum_ci x[..., ci] * w[co, ci] + b[co]; last-dim linear map.
template <typename T>
VarPtr<T> linear(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b);

/// Depthwise causal 1-D convolution along L: w is (C, k).
template <typename T>
VarPtr<T> dwconv1d_causal(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b);

template <typename T>
VarPtr<T> concat_last(const VarPtr<T>& a, const VarPtr<T>& b);
template <typename T>
VarPtr<T> slice_last(const VarPtr<T>& x, int64_t from, int64_t to);
/// (B, L, C) -> (B, C, L)
template <typename T>
VarPtr<T> transpose_cl(const VarPtr<T>& x);
/// (B, C, L) -> (B, L, C)
template <typename T>
VarPtr<T> transpose_lc(const VarPtr<T>& x);

// ---- volume ops, shapes (B, C, D, H, W) ----------------------------------

/// 3x3x3 convolution, zero padding 1, stride 1 or 2. w: (Cout, Cin, 3, 3, 3).
template <typename T>
VarPtr<T> conv3d(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b, int stride);

/// 1x1x1 convolution with optional stride 2 (picks every other voxel).
template <typename T>
VarPtr<T> conv1x1(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b, int stride = 1);

/// Transposed conv, kernel 2, stride 2 (doubles each spatial dim). w: (Cin, Cout, 2, 2, 2).
template <typename T>
VarPtr<T> conv_transpose3d_k2s2(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b);

enum class Act { None, LeakyRelu };

/// Per-(batch, channel) instance normalization with affine, optionally fused
/// with LeakyReLU(0.01).
template <typename T>
VarPtr<T> instance_norm_act(const VarPtr<T>& x, const VarPtr<T>& gamma, const VarPtr<T>& beta,
                            Act act, T eps = T(1e-5));

// ---- point sampling (ops_sample.cpp) -------------------------------------

/// Trilinear sampling of feat (B,C,D,H,W) at coords (B,N,3) given in [0,1]^3
/// normalized volume coordinates ((z,y,x) order). Returns (B,N,C). Gradients
/// flow to both the features and the coordinates.
template <typename T>
VarPtr<T> grid_sample_trilinear(const VarPtr<T>& feat, const VarPtr<T>& coords);

/// Adjoint of the sampler: scatter values (B,N,C) into a copy of base with
/// trilinear weights at coords. Returns (B,C,D,H,W).
template <typename T>
VarPtr<T> scatter_trilinear_add(const VarPtr<T>& base, const VarPtr<T>& coords,
                                const VarPtr<T>& values);

// ---- selective scan (ops_scan.cpp) ----------------------------------------

/// Fused selective-scan: per (batch, channel) recurrence over L steps with
/// per-step zero-order-hold discretization of the diagonal state matrix.
///   delta (B,C,L)  positive step sizes
///   a     (C,N)    diagonal continuous-time state matrix (negative entries)
///   bseq  (B,N,L)  input projection per step
///   cseq  (B,N,L)  output projection per step
///   x     (B,C,L)  input sequence
///   skip  (C)      direct feedthrough
/// Returns y (B,C,L).
template <typename T>
VarPtr<T> selective_scan(const VarPtr<T>& delta, const VarPtr<T>& a, const VarPtr<T>& bseq,
                         const VarPtr<T>& cseq, const VarPtr<T>& x, const VarPtr<T>& skip);

// ---- losses (ops_loss.cpp) -------------------------------------------------

/// Mean per-voxel cross entropy of logits (B,K,D,H,W) against labels (B,D,H,W).
template <typename T>
VarPtr<T> ce_loss(const VarPtr<T>& logits, const Tensor<int32_t>& labels);

/// Soft Dice loss, averaged over foreground classes 1..K-1.
template <typename T>
VarPtr<T> dice_loss(const VarPtr<T>& logits, const Tensor<int32_t>& labels, T eps = T(1e-5));

/// Optimal-assignment point matching cost between pred (B,N,3) and gt (B,N,3):
/// sum over batch of min_sigma sum_i ||pred_i - gt_sigma(i)||_2.
template <typename T>
VarPtr<T> match_loss_op(const VarPtr<T>& pred, const Tensor<T>& gt);

/// Exact O(n^3) solver for the assignment problem on an n x n cost matrix
/// (row-major). Returns the column assigned to each row.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n);

// ---- optimizer -------------------------------------------------------------

template <typename T>
class Adam {
  public:
    Adam(std::vector<VarPtr<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
         T eps = T(1e-8));
    void step();
    void zero_grad();
    void set_lr(T lr) { lr_ = lr; }

  private:
    std::vector<VarPtr<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    T lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace tgdm::nn
