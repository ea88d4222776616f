#include <cmath>
#include <vector>

#include "doctest.h"
#include "tgdm/autodiff.hpp"
#include "tgdm/common.hpp"
#include "tgdm/kernels.hpp"
#include "tgdm/ssm.hpp"

using namespace tgdm;
using nn::Tensor;
using nn::VarPtr;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

/// Central finite-difference check of d(loss)/d(param[idx]) for a scalar-
/// valued builder invoked twice per probe.
template <typename BuildLoss>
double fd_check(const VarPtr<double>& param, BuildLoss build, Rng& rng, int probes,
                double eps = 1e-5) {
    double worst = 0.0;
    for (int p = 0; p < probes; ++p) {
        param->grad = Tensor<double>();  // earlier checks may have accumulated here
        auto loss = build();
        nn::backward(loss);
        const int64_t idx = static_cast<int64_t>(rng.bounded(param->value.numel()));
        const double analytic = param->grad.numel() ? param->grad[idx] : 0.0;
        param->grad = Tensor<double>();

        const double saved = param->value[idx];
        param->value[idx] = saved + eps;
        const double lp = build()->value.item();
        param->value[idx] = saved - eps;
        const double lm = build()->value.item();
        param->value[idx] = saved;
        const double numeric = (lp - lm) / (2 * eps);
        // Floor the denominator: near-zero entries are compared absolutely so
        // finite-difference cancellation noise does not register as error.
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("gemm fast path matches generic") {
    Rng rng(7);
    for (auto [m, n, k] : {std::tuple<int64_t, int64_t, int64_t>{16, 96, 27},
                           {5, 33, 17},
                           {21, 144, 64},
                           {1, 1, 1}}) {
        std::vector<float> a(m * k), b(k * n), c1(m * n, 0.5f), c2(m * n, 0.5f);
        for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
        nn::kern::gemm_f32(m, n, k, a.data(), b.data(), c1.data(), true);
        // reference in double
        std::vector<double> ref(m * n, 0.5);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk)
                for (int64_t j = 0; j < n; ++j) ref[i * n + j] += (double)a[i * k + kk] * b[kk * n + j];
        for (int64_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(ref[i]).epsilon(1e-4));
        (void)c2;
    }
}

TEST_CASE("conv3d k3s1 kernel matches naive") {
    Rng rng(11);
    const int64_t Cin = 3, Cout = 5, D = 4, H = 5, W = 19;
    std::vector<float> xpad(Cin * (D + 2) * (H + 2) * (W + 2));
    for (auto& v : xpad) v = static_cast<float>(rng.uniform(-1, 1));
    std::vector<float> w(Cout * Cin * 27);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
    std::vector<float> out(Cout * D * H * W);
    nn::kern::conv3d_k3s1_fwd_f32(xpad.data(), w.data(), out.data(), Cin, Cout, D, H, W);

    const int64_t Hp = H + 2, Wp = W + 2, plane_p = Hp * Wp, vol_p = (D + 2) * plane_p;
    for (int64_t co = 0; co < Cout; ++co)
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    double acc = 0;
                    for (int64_t ci = 0; ci < Cin; ++ci)
                        for (int64_t dz = 0; dz < 3; ++dz)
                            for (int64_t dy = 0; dy < 3; ++dy)
                                for (int64_t dx = 0; dx < 3; ++dx)
                                    acc += (double)w[(co * Cin + ci) * 27 + dz * 9 + dy * 3 + dx] *
                                           xpad[ci * vol_p + (z + dz) * plane_p + (y + dy) * Wp + x + dx];
                    CHECK(out[((co * D + z) * H + y) * W + x] ==
                          doctest::Approx(acc).epsilon(1e-4));
                }
}

TEST_CASE("elementwise and linear gradients match finite differences") {
    Rng rng(3);
    auto w = nn::make_leaf(random_tensor({4, 6}, rng), true);
    auto b = nn::make_leaf(random_tensor({4}, rng), true);
    auto x = nn::make_leaf(random_tensor({2, 5, 6}, rng), true);

    auto build = [&]() {
        auto h = nn::linear(x, w, b);
        auto act = nn::silu(h);
        return nn::mean_all(nn::mul(act, nn::sigmoid(act)));
    };
    CHECK(fd_check(w, build, rng, 10) < 1e-6);
    CHECK(fd_check(b, build, rng, 5) < 1e-6);
    CHECK(fd_check(x, build, rng, 10) < 1e-6);
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(5);
    for (int stride : {1, 2}) {
        auto x = nn::make_leaf(random_tensor({1, 2, 5, 6, 7}, rng), true);
        auto w = nn::make_leaf(random_tensor({3, 2, 3, 3, 3}, rng, 0.5), true);
        auto b = nn::make_leaf(random_tensor({3}, rng, 0.1), true);
        auto build = [&]() { return nn::mean_all(nn::leaky_relu(nn::conv3d(x, w, b, stride), 0.01)); };
        CHECK(fd_check(w, build, rng, 10) < 1e-5);
        CHECK(fd_check(x, build, rng, 10) < 1e-5);
        CHECK(fd_check(b, build, rng, 3) < 1e-5);
    }
}

TEST_CASE("transposed conv and 1x1 conv gradients") {
    Rng rng(9);
    auto x = nn::make_leaf(random_tensor({1, 3, 3, 4, 5}, rng), true);
    auto w = nn::make_leaf(random_tensor({3, 2, 2, 2, 2}, rng, 0.5), true);
    auto b = nn::make_leaf(random_tensor({2}, rng, 0.1), true);
    auto build = [&]() { return nn::mean_all(nn::silu(nn::conv_transpose3d_k2s2(x, w, b))); };
    CHECK(fd_check(w, build, rng, 10) < 1e-5);
    CHECK(fd_check(x, build, rng, 10) < 1e-5);

    auto w1 = nn::make_leaf(random_tensor({4, 3}, rng), true);
    auto b1 = nn::make_leaf(random_tensor({4}, rng, 0.1), true);
    for (int stride : {1, 2}) {
        auto build1 = [&]() { return nn::mean_all(nn::silu(nn::conv1x1(x, w1, b1, stride))); };
        CHECK(fd_check(w1, build1, rng, 8) < 1e-5);
        CHECK(fd_check(x, build1, rng, 8) < 1e-5);
    }
}

TEST_CASE("instance norm gradients") {
    Rng rng(13);
    auto x = nn::make_leaf(random_tensor({2, 3, 3, 3, 4}, rng), true);
    auto g = nn::make_leaf(random_tensor({3}, rng), true);
    auto be = nn::make_leaf(random_tensor({3}, rng), true);
    for (auto act : {nn::Act::None, nn::Act::LeakyRelu}) {
        auto build = [&]() { return nn::mean_all(nn::mul(nn::instance_norm_act(x, g, be, act), nn::instance_norm_act(x, g, be, act))); };
        CHECK(fd_check(x, build, rng, 10) < 1e-4);
        CHECK(fd_check(g, build, rng, 5) < 1e-4);
        CHECK(fd_check(be, build, rng, 5) < 1e-4);
    }
}

TEST_CASE("grid sample and scatter gradients") {
    Rng rng(17);
    auto feat = nn::make_leaf(random_tensor({1, 3, 4, 5, 6}, rng), true);
    Tensor<double> coords({1, 7, 3});
    for (int64_t i = 0; i < coords.numel(); ++i) coords[i] = rng.uniform(0.15, 0.85);
    auto cvar = nn::make_leaf(coords, true);
    auto vals = nn::make_leaf(random_tensor({1, 7, 3}, rng), true);

    auto build = [&]() {
        auto sampled = nn::grid_sample_trilinear(feat, cvar);
        auto scat = nn::scatter_trilinear_add(feat, cvar, vals);
        return nn::add_scalars<double>({nn::mean_all(nn::mul(sampled, sampled)),
                                        nn::mean_all(nn::mul(scat, scat))});
    };
    CHECK(fd_check(feat, build, rng, 10) < 1e-5);
    CHECK(fd_check(cvar, build, rng, 10) < 1e-4);
    CHECK(fd_check(vals, build, rng, 10) < 1e-5);
}

TEST_CASE("selective scan gradients and mamba block") {
    Rng rng(23);
    ssm::MambaConfig cfg;
    cfg.d_model = 8;
    cfg.d_state = 4;
    ssm::MambaBlock<double> block(cfg, rng);
    auto x = nn::make_leaf(random_tensor({2, 6, 8}, rng), true);
    auto build = [&]() { return nn::mean_all(nn::mul(block.forward(x), block.forward(x))); };
    for (auto& [name, p] : block.named_params("m")) {
        INFO(name);
        CHECK(fd_check(p, build, rng, 6) < 1e-4);
    }
    CHECK(fd_check(x, build, rng, 10) < 1e-4);
}

TEST_CASE("losses: ce, dice, match gradients") {
    Rng rng(29);
    auto logits = nn::make_leaf(random_tensor({1, 3, 2, 3, 4}, rng), true);
    Tensor<int32_t> labels({1, 2, 3, 4});
    for (int64_t i = 0; i < labels.numel(); ++i) labels[i] = static_cast<int32_t>(rng.bounded(3));

    auto build_ce = [&]() { return nn::ce_loss(logits, labels); };
    CHECK(fd_check(logits, build_ce, rng, 12) < 1e-6);
    auto build_dice = [&]() { return nn::dice_loss(logits, labels, 1e-5); };
    CHECK(fd_check(logits, build_dice, rng, 12) < 1e-5);

    auto pred = nn::make_leaf(random_tensor({2, 5, 3}, rng), true);
    Tensor<double> gt = random_tensor({2, 5, 3}, rng);
    auto build_match = [&]() { return nn::match_loss_op(pred, gt); };
    CHECK(fd_check(pred, build_match, rng, 12) < 1e-6);
}

TEST_CASE("adam reduces a quadratic") {
    Rng rng(31);
    auto w = nn::make_leaf(random_tensor({8}, rng), true);
    nn::Adam<double> opt({w}, 0.05);
    double first = 0, last = 0;
    for (int it = 0; it < 200; ++it) {
        auto loss = nn::mean_all(nn::mul(w, w));
        if (it == 0) first = loss->value.item();
        last = loss->value.item();
        opt.zero_grad();
        nn::backward(loss);
        opt.step();
    }
    CHECK(last < 0.01 * first);
}
