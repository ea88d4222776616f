#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgdm/autodiff.hpp"
#include "tgdm/common.hpp"

namespace tgdm::ssm {

/// phi(u) = (e^u - 1)/u, continuous through u = 0. Below the guard the
/// two-term Taylor expansion is used; above it expm1 keeps full precision.
inline constexpr double kTaylorGuard = 1e-4;

template <typename T>
T phi(T u) {
    if (std::abs(u) < T(kTaylorGuard)) return T(1) + u / T(2);
    return std::expm1(u) / u;
}

/// phi'(u) = (e^u (u - 1) + 1) / u^2, with a series guard for small u.
template <typename T>
T phi_prime(T u) {
    if (std::abs(u) < T(1e-3)) return T(0.5) + u / T(3) + u * u / T(8);
    return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

template <typename T>
struct Discretized {
    T abar;
    T bbar;
};

/// Zero-order-hold discretization of a diagonal continuous-time pair:
/// abar = exp(delta a), bbar = (delta a)^{-1} (exp(delta a) - 1) delta b.
template <typename T>
Discretized<T> discretize(T delta, T a, T b) {
    if (!(delta > T(0))) throw std::invalid_argument("discretize: delta must be positive");
    const T u = delta * a;
    return {std::exp(u), delta * b * phi(u)};
}

/// Configuration of one Mamba block.
struct MambaConfig {
    int64_t d_model = 64;   // C
    int64_t d_state = 8;    // N per channel
    int64_t expand = 2;     // inner width multiplier
    int64_t d_conv = 4;     // depthwise causal conv length
    int64_t dt_rank = 0;    // 0 -> ceil(d_model / 16)
    bool zero_out_proj = false;

    int64_t inner() const { return expand * d_model; }
    int64_t rank() const { return dt_rank > 0 ? dt_rank : (d_model + 15) / 16; }
};

/// Gated selective-state-space block: in-projection, causal depthwise conv,
/// input-dependent (delta, B, C) with learned diagonal A, linear-time scan,
/// gate multiply, out-projection.
template <typename T>
class MambaBlock {
  public:
    MambaBlock() = default;
    MambaBlock(const MambaConfig& cfg, Rng& rng);

    /// x: (B, L, C) -> (B, L, C)
    nn::VarPtr<T> forward(const nn::VarPtr<T>& x) const;

    const MambaConfig& config() const { return cfg_; }

    /// Named trainable parameters (stable order).
    std::vector<std::pair<std::string, nn::VarPtr<T>>> named_params(
        const std::string& prefix) const;

    nn::VarPtr<T> out_proj_weight() const { return out_proj_w_; }

  private:
    MambaConfig cfg_;
    nn::VarPtr<T> in_proj_w_;   // (2*inner, C)
    nn::VarPtr<T> conv_w_;      // (inner, d_conv)
    nn::VarPtr<T> conv_b_;      // (inner)
    nn::VarPtr<T> x_proj_w_;    // (rank + 2*N, inner)
    nn::VarPtr<T> dt_proj_w_;   // (inner, rank)
    nn::VarPtr<T> dt_proj_b_;   // (inner)
    nn::VarPtr<T> a_log_;       // (inner, N); A = -exp(a_log)
    nn::VarPtr<T> skip_d_;      // (inner)
    nn::VarPtr<T> out_proj_w_;  // (C, inner)
};

}  // namespace tgdm::ssm
