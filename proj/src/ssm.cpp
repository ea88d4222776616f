#include "tgdm/ssm.hpp"

#include <cmath>

namespace tgdm::ssm {

using nn::Tensor;
using nn::VarPtr;

namespace {

template <typename T>
Tensor<T> uniform_init(std::vector<int64_t> shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

template <typename T>
MambaBlock<T>::MambaBlock(const MambaConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int64_t C = cfg.d_model, Ci = cfg.inner(), N = cfg.d_state, R = cfg.rank();
    const double kc = 1.0 / std::sqrt(static_cast<double>(C));
    const double ki = 1.0 / std::sqrt(static_cast<double>(Ci));
    const double kk = 1.0 / std::sqrt(static_cast<double>(cfg.d_conv));
    const double kr = 1.0 / std::sqrt(static_cast<double>(R));

    in_proj_w_ = nn::make_leaf<T>(uniform_init<T>({2 * Ci, C}, kc, rng), true, "in_proj.w");
    conv_w_ = nn::make_leaf<T>(uniform_init<T>({Ci, cfg.d_conv}, kk, rng), true, "conv.w");
    conv_b_ = nn::make_leaf<T>(uniform_init<T>({Ci}, kk, rng), true, "conv.b");
    x_proj_w_ = nn::make_leaf<T>(uniform_init<T>({R + 2 * N, Ci}, ki, rng), true, "x_proj.w");
    dt_proj_w_ = nn::make_leaf<T>(uniform_init<T>({Ci, R}, kr, rng), true, "dt_proj.w");

    // dt bias: softplus^{-1} of step sizes log-uniform in [1e-3, 1e-1].
    Tensor<T> dtb({Ci});
    for (int64_t i = 0; i < Ci; ++i) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        dtb[i] = static_cast<T>(std::log(std::expm1(dt)));
    }
    dt_proj_b_ = nn::make_leaf<T>(std::move(dtb), true, "dt_proj.b");

    // S4D-real: A = -(1..N) per channel.
    Tensor<T> alog({Ci, N});
    for (int64_t c = 0; c < Ci; ++c)
        for (int64_t n = 0; n < N; ++n)
            alog[c * N + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
    a_log_ = nn::make_leaf<T>(std::move(alog), true, "a_log");

    skip_d_ = nn::make_leaf<T>(Tensor<T>::full({Ci}, T(1)), true, "d");
    Tensor<T> ow = cfg.zero_out_proj ? Tensor<T>({C, Ci})
                                     : uniform_init<T>({C, Ci}, ki, rng);
    out_proj_w_ = nn::make_leaf<T>(std::move(ow), true, "out_proj.w");
}

template <typename T>
VarPtr<T> MambaBlock<T>::forward(const VarPtr<T>& x) const {
    const auto& xs = x->value.shape();
    if (xs.size() != 3 || xs[2] != cfg_.d_model)
        throw std::invalid_argument("MambaBlock: expect (B,L," +
                                    std::to_string(cfg_.d_model) + "), got " +
                                    x->value.shape_str());
    const int64_t Ci = cfg_.inner(), N = cfg_.d_state, R = cfg_.rank();

    auto xz = nn::linear<T>(x, in_proj_w_, nullptr);
    auto x_in = nn::slice_last(xz, 0, Ci);
    auto z = nn::slice_last(xz, Ci, 2 * Ci);

    auto u = nn::silu(nn::dwconv1d_causal(x_in, conv_w_, conv_b_));

    auto dbc = nn::linear<T>(u, x_proj_w_, nullptr);
    auto dt_low = nn::slice_last(dbc, 0, R);
    auto b_part = nn::slice_last(dbc, R, R + N);
    auto c_part = nn::slice_last(dbc, R + N, R + 2 * N);

    auto dt = nn::softplus(nn::linear<T>(dt_low, dt_proj_w_, dt_proj_b_));
    auto a = nn::neg_exp(a_log_);

    auto y = nn::selective_scan(nn::transpose_cl(dt), a, nn::transpose_cl(b_part),
                                nn::transpose_cl(c_part), nn::transpose_cl(u), skip_d_);
    auto gated = nn::mul(nn::transpose_lc(y), nn::silu(z));
    return nn::linear<T>(gated, out_proj_w_, nullptr);
}

template <typename T>
std::vector<std::pair<std::string, VarPtr<T>>> MambaBlock<T>::named_params(
    const std::string& prefix) const {
    return {{prefix + ".in_proj.w", in_proj_w_}, {prefix + ".conv.w", conv_w_},
            {prefix + ".conv.b", conv_b_},       {prefix + ".x_proj.w", x_proj_w_},
            {prefix + ".dt_proj.w", dt_proj_w_}, {prefix + ".dt_proj.b", dt_proj_b_},
            {prefix + ".a_log", a_log_},         {prefix + ".d", skip_d_},
            {prefix + ".out_proj.w", out_proj_w_}};
}

template class MambaBlock<float>;
template class MambaBlock<double>;

}  // namespace tgdm::ssm
