#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tgdm/autodiff.hpp"
#include "tgdm/kernels.hpp"
#include "autodiff_internal.hpp"

namespace tgdm::nn {

using detail::wants_grad;
using detail::make_op;
using detail::transpose_rm;

namespace {

/// Copy one channel volume into a zero-padded buffer (pad 1 on each side).
template <typename T>
void pad_channels(const T* src, T* dst, int64_t C, int64_t D, int64_t H, int64_t W) {
    const int64_t Hp = H + 2, Wp = W + 2, Dp = D + 2;
    const int64_t plane_p = Hp * Wp, vol_p = Dp * plane_p;
    std::fill(dst, dst + C * vol_p, T(0));
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c)
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                std::copy_n(src + ((c * D + z) * H + y) * W, W,
                            dst + c * vol_p + (z + 1) * plane_p + (y + 1) * Wp + 1);
}

/// im2col for 3x3x3 / pad 1 at arbitrary stride, one output z-slice at a time.
/// col layout: (27*Cin) x (OH*OW).
template <typename T>
void im2col_slice(const T* x, int64_t Cin, int64_t D, int64_t H, int64_t W, int stride,
                  int64_t oz, int64_t OH, int64_t OW, T* col) {
    const int64_t plane = H * W, vol = D * H * W;
    for (int64_t ci = 0; ci < Cin; ++ci) {
        for (int64_t off = 0; off < 27; ++off) {
            const int64_t dz = off / 9 - 1, dy = (off / 3) % 3 - 1, dx = off % 3 - 1;
            T* crow = col + (ci * 27 + off) * OH * OW;
            const int64_t z = oz * stride + dz;
            if (z < 0 || z >= D) {
                std::fill(crow, crow + OH * OW, T(0));
                continue;
            }
            for (int64_t oy = 0; oy < OH; ++oy) {
                const int64_t y = oy * stride + dy;
                if (y < 0 || y >= H) {
                    std::fill(crow + oy * OW, crow + (oy + 1) * OW, T(0));
                    continue;
                }
                const T* xrow = x + ci * vol + z * plane + y * W;
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const int64_t xx = ox * stride + dx;
                    crow[oy * OW + ox] = (xx >= 0 && xx < W) ? xrow[xx] : T(0);
                }
            }
        }
    }
}

template <typename T>
void col2im_slice_add(const T* col, int64_t Cin, int64_t D, int64_t H, int64_t W, int stride,
                      int64_t oz, int64_t OH, int64_t OW, T* gx) {
    const int64_t plane = H * W, vol = D * H * W;
    for (int64_t ci = 0; ci < Cin; ++ci) {
        for (int64_t off = 0; off < 27; ++off) {
            const int64_t dz = off / 9 - 1, dy = (off / 3) % 3 - 1, dx = off % 3 - 1;
            const T* crow = col + (ci * 27 + off) * OH * OW;
            const int64_t z = oz * stride + dz;
            if (z < 0 || z >= D) continue;
            for (int64_t oy = 0; oy < OH; ++oy) {
                const int64_t y = oy * stride + dy;
                if (y < 0 || y >= H) continue;
                T* xrow = gx + ci * vol + z * plane + y * W;
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const int64_t xx = ox * stride + dx;
                    if (xx >= 0 && xx < W) xrow[xx] += crow[oy * OW + ox];
                }
            }
        }
    }
}

template <typename T>
void add_bias_volume(T* out, const T* bias, int64_t Cout, int64_t vol) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < Cout; ++co) {
        const T bv = bias[co];
        T* row = out + co * vol;
        for (int64_t i = 0; i < vol; ++i) row[i] += bv;
    }
}

}  // namespace

template <typename T>
VarPtr<T> conv3d(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b, int stride) {
    const auto& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("conv3d: expect (B,C,D,H,W)");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
    const int64_t B = xs[0], Cin = xs[1], D = xs[2], H = xs[3], W = xs[4];
    if (w->value.rank() != 5 || w->value.dim(1) != Cin || w->value.dim(2) != 3)
        throw std::invalid_argument("conv3d: weight shape mismatch");
    const int64_t Cout = w->value.dim(0);
    const int64_t OD = (D + 2 - 3) / stride + 1;
    const int64_t OH = (H + 2 - 3) / stride + 1;
    const int64_t OW = (W + 2 - 3) / stride + 1;
    Tensor<T> out({B, Cout, OD, OH, OW});
    const int64_t in_vol = D * H * W, out_vol = OD * OH * OW;

    if (stride == 1) {
        std::vector<T> xpad(static_cast<size_t>(Cin) * (D + 2) * (H + 2) * (W + 2));
        for (int64_t bi = 0; bi < B; ++bi) {
            pad_channels(x->value.data() + bi * Cin * in_vol, xpad.data(), Cin, D, H, W);
            kern::conv3d_k3s1_fwd(xpad.data(), w->value.data(),
                                  out.data() + bi * Cout * out_vol, Cin, Cout, D, H, W);
            if (b) add_bias_volume(out.data() + bi * Cout * out_vol, b->value.data(), Cout,
                                   out_vol);
        }
    } else {
        const int64_t K = 27 * Cin, Nsl = OH * OW;
        for (int64_t bi = 0; bi < B; ++bi) {
#pragma omp parallel for schedule(static)
            for (int64_t oz = 0; oz < OD; ++oz) {
                std::vector<T> col(static_cast<size_t>(K) * Nsl);
                im2col_slice(x->value.data() + bi * Cin * in_vol, Cin, D, H, W, stride, oz, OH,
                             OW, col.data());
                std::vector<T> oslice(static_cast<size_t>(Cout) * Nsl);
                kern::gemm<T>(Cout, Nsl, K, w->value.data(), col.data(), oslice.data(), false);
                for (int64_t co = 0; co < Cout; ++co)
                    std::copy_n(oslice.data() + co * Nsl, Nsl,
                                out.data() + ((bi * Cout + co) * OD + oz) * Nsl);
            }
            if (b) add_bias_volume(out.data() + bi * Cout * out_vol, b->value.data(), Cout,
                                   out_vol);
        }
    }

    std::vector<VarPtr<T>> parents = b ? std::vector<VarPtr<T>>{x, w, b}
                                       : std::vector<VarPtr<T>>{x, w};
    auto node = make_op<T>(std::move(out), parents, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, w, b, stride, B, Cin, Cout, D, H, W, OD, OH, OW, in_vol,
                             out_vol]() {
            const T* gy = self->grad.data();
            if (stride == 1) {
                std::vector<T> pad_buf(
                    static_cast<size_t>(std::max(Cin, Cout)) * (D + 2) * (H + 2) * (W + 2));
                std::vector<T> wflip;
                if (wants_grad(x)) {
                    // dx = conv(dy, w flipped with channels swapped)
                    wflip.assign(static_cast<size_t>(Cin) * Cout * 27, T(0));
                    for (int64_t co = 0; co < Cout; ++co)
                        for (int64_t ci = 0; ci < Cin; ++ci)
                            for (int64_t off = 0; off < 27; ++off)
                                wflip[(ci * Cout + co) * 27 + (26 - off)] =
                                    w->value[(co * Cin + ci) * 27 + off];
                }
                for (int64_t bi = 0; bi < B; ++bi) {
                    if (wants_grad(x)) {
                        pad_channels(gy + bi * Cout * out_vol, pad_buf.data(), Cout, D, H, W);
                        std::vector<T> dx(static_cast<size_t>(Cin) * in_vol);
                        kern::conv3d_k3s1_fwd(pad_buf.data(), wflip.data(), dx.data(), Cout, Cin,
                                              D, H, W);
                        auto& gx = x->ensure_grad();
                        T* gxp = gx.data() + bi * Cin * in_vol;
#pragma omp parallel for schedule(static)
                        for (int64_t i = 0; i < Cin * in_vol; ++i) gxp[i] += dx[i];
                    }
                    if (wants_grad(w)) {
                        pad_channels(x->value.data() + bi * Cin * in_vol, pad_buf.data(), Cin, D,
                                     H, W);
                        kern::conv3d_k3s1_wgrad(pad_buf.data(), gy + bi * Cout * out_vol,
                                                w->ensure_grad().data(), Cin, Cout, D, H, W);
                    }
                }
            } else {
                const int64_t K = 27 * Cin, Nsl = OH * OW;
                std::vector<T> wt;
                if (wants_grad(x)) {
                    wt.resize(static_cast<size_t>(K) * Cout);
                    transpose_rm(Cout, K, w->value.data(), wt.data());
                }
                for (int64_t bi = 0; bi < B; ++bi) {
                    for (int64_t oz = 0; oz < OD; ++oz) {
                        const T* gslice = gy + ((bi * Cout) * OD + oz) * Nsl;
                        // gather the slice (strided across channels)
                        std::vector<T> gtmp(static_cast<size_t>(Cout) * Nsl);
                        for (int64_t co = 0; co < Cout; ++co)
                            std::copy_n(gy + ((bi * Cout + co) * OD + oz) * Nsl, Nsl,
                                        gtmp.data() + co * Nsl);
                        (void)gslice;
                        if (wants_grad(x)) {
                            std::vector<T> dcol(static_cast<size_t>(K) * Nsl);
                            kern::gemm<T>(K, Nsl, Cout, wt.data(), gtmp.data(), dcol.data(),
                                          false);
                            col2im_slice_add(dcol.data(), Cin, D, H, W, stride, oz, OH, OW,
                                             x->ensure_grad().data() + bi * Cin * in_vol);
                        }
                        if (wants_grad(w)) {
                            std::vector<T> col(static_cast<size_t>(K) * Nsl);
                            im2col_slice(x->value.data() + bi * Cin * in_vol, Cin, D, H, W,
                                         stride, oz, OH, OW, col.data());
                            std::vector<T> colt(static_cast<size_t>(Nsl) * K);
                            transpose_rm(K, Nsl, col.data(), colt.data());
                            kern::gemm<T>(Cout, K, Nsl, gtmp.data(), colt.data(),
                                          w->ensure_grad().data(), true);
                        }
                    }
                }
            }
            if (b && wants_grad(b)) {
                auto& gb = b->ensure_grad();
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t co = 0; co < Cout; ++co) {
                        T s = T(0);
                        const T* row = gy + (bi * Cout + co) * out_vol;
                        for (int64_t i = 0; i < out_vol; ++i) s += row[i];
                        gb[co] += s;
                    }
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> conv1x1(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b, int stride) {
    const auto& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("conv1x1: expect (B,C,D,H,W)");
    const int64_t B = xs[0], Cin = xs[1], D = xs[2], H = xs[3], W = xs[4];
    if (w->value.rank() != 2 || w->value.dim(1) != Cin)
        throw std::invalid_argument("conv1x1: weight shape mismatch");
    const int64_t Cout = w->value.dim(0);
    const int64_t OD = (D + stride - 1) / stride, OH = (H + stride - 1) / stride,
                  OW = (W + stride - 1) / stride;
    const int64_t in_vol = D * H * W, out_vol = OD * OH * OW;
    Tensor<T> out({B, Cout, OD, OH, OW});

    auto gather = [Cin, D, H, W, stride, in_vol, out_vol](const T* src, T* dst) {
        // (Cin, D,H,W) -> (Cin, OD*OH*OW) picking every stride-th voxel
        for (int64_t ci = 0; ci < Cin; ++ci) {
            T* drow = dst + ci * out_vol;
            const T* srow = src + ci * in_vol;
            int64_t idx = 0;
            for (int64_t z = 0; z < D; z += stride)
                for (int64_t y = 0; y < H; y += stride)
                    for (int64_t xx = 0; xx < W; xx += stride)
                        drow[idx++] = srow[(z * H + y) * W + xx];
        }
    };

    std::vector<T> tmp;
    for (int64_t bi = 0; bi < B; ++bi) {
        const T* src = x->value.data() + bi * Cin * in_vol;
        const T* mat = src;
        if (stride != 1) {
            tmp.resize(static_cast<size_t>(Cin) * out_vol);
            gather(src, tmp.data());
            mat = tmp.data();
        }
        kern::gemm<T>(Cout, out_vol, Cin, w->value.data(), mat,
                      out.data() + bi * Cout * out_vol, false);
        if (b) add_bias_volume(out.data() + bi * Cout * out_vol, b->value.data(), Cout, out_vol);
    }

    std::vector<VarPtr<T>> parents = b ? std::vector<VarPtr<T>>{x, w, b}
                                       : std::vector<VarPtr<T>>{x, w};
    auto node = make_op<T>(std::move(out), parents, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, w, b, stride, B, Cin, Cout, D, H, W, in_vol, out_vol,
                             gather]() {
            const T* gy = self->grad.data();
            std::vector<T> wt(static_cast<size_t>(Cin) * Cout);
            transpose_rm(Cout, Cin, w->value.data(), wt.data());
            for (int64_t bi = 0; bi < B; ++bi) {
                const T* gslab = gy + bi * Cout * out_vol;
                if (wants_grad(x)) {
                    std::vector<T> dxm(static_cast<size_t>(Cin) * out_vol);
                    kern::gemm<T>(Cin, out_vol, Cout, wt.data(), gslab, dxm.data(), false);
                    auto& gx = x->ensure_grad();
                    T* gxp = gx.data() + bi * Cin * in_vol;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        int64_t idx = 0;
                        for (int64_t z = 0; z < D; z += stride)
                            for (int64_t y = 0; y < H; y += stride)
                                for (int64_t xx = 0; xx < W; xx += stride)
                                    gxp[ci * in_vol + (z * H + y) * W + xx] +=
                                        dxm[ci * out_vol + idx++];
                    }
                }
                if (wants_grad(w)) {
                    const T* src = x->value.data() + bi * Cin * in_vol;
                    std::vector<T> tmp;
                    const T* mat = src;
                    if (stride != 1) {
                        tmp.resize(static_cast<size_t>(Cin) * out_vol);
                        gather(src, tmp.data());
                        mat = tmp.data();
                    }
                    std::vector<T> matt(static_cast<size_t>(out_vol) * Cin);
                    transpose_rm(Cin, out_vol, mat, matt.data());
                    kern::gemm<T>(Cout, Cin, out_vol, gslab, matt.data(),
                                  w->ensure_grad().data(), true);
                }
                if (b && wants_grad(b)) {
                    auto& gb = b->ensure_grad();
                    for (int64_t co = 0; co < Cout; ++co) {
                        T s = T(0);
                        const T* row = gslab + co * out_vol;
                        for (int64_t i = 0; i < out_vol; ++i) s += row[i];
                        gb[co] += s;
                    }
                }
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> conv_transpose3d_k2s2(const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
    const auto& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("conv_transpose3d: expect (B,C,D,H,W)");
    const int64_t B = xs[0], Cin = xs[1], D = xs[2], H = xs[3], W = xs[4];
    if (w->value.rank() != 5 || w->value.dim(0) != Cin || w->value.dim(2) != 2)
        throw std::invalid_argument("conv_transpose3d: weight shape mismatch");
    const int64_t Cout = w->value.dim(1);
    const int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;
    const int64_t in_vol = D * H * W, out_vol = OD * OH * OW;
    Tensor<T> out({B, Cout, OD, OH, OW});

    // Kernel 2 stride 2: each output voxel receives exactly one input voxel,
    // so each of the 8 parities is an independent 1x1 projection.
    std::vector<T> wp(static_cast<size_t>(8) * Cout * Cin);
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t p = 0; p < 8; ++p)
                wp[(p * Cout + co) * Cin + ci] = w->value[(ci * Cout + co) * 8 + p];

    std::vector<T> tmp(static_cast<size_t>(Cout) * in_vol);
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t p = 0; p < 8; ++p) {
            const int64_t pz = p / 4, py = (p / 2) % 2, px = p % 2;
            kern::gemm<T>(Cout, in_vol, Cin, wp.data() + p * Cout * Cin,
                          x->value.data() + bi * Cin * in_vol, tmp.data(), false);
#pragma omp parallel for schedule(static)
            for (int64_t co = 0; co < Cout; ++co) {
                const T bv = b ? b->value[co] : T(0);
                for (int64_t z = 0; z < D; ++z)
                    for (int64_t y = 0; y < H; ++y) {
                        const T* srow = tmp.data() + co * in_vol + (z * H + y) * W;
                        T* drow = out.data() + (bi * Cout + co) * out_vol +
                                  ((2 * z + pz) * OH + (2 * y + py)) * OW + px;
                        for (int64_t xx = 0; xx < W; ++xx) drow[2 * xx] = srow[xx] + bv;
                    }
            }
        }
    }

    std::vector<VarPtr<T>> parents = b ? std::vector<VarPtr<T>>{x, w, b}
                                       : std::vector<VarPtr<T>>{x, w};
    auto node = make_op<T>(std::move(out), parents, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, w, b, B, Cin, Cout, D, H, W, OH, OW, in_vol, out_vol,
                             wp]() {
            const T* gy = self->grad.data();
            std::vector<T> gtmp(static_cast<size_t>(Cout) * in_vol);
            std::vector<T> wpt(static_cast<size_t>(Cin) * Cout);
            for (int64_t bi = 0; bi < B; ++bi) {
                for (int64_t p = 0; p < 8; ++p) {
                    const int64_t pz = p / 4, py = (p / 2) % 2, px = p % 2;
                    // gather this parity of dy: (Cout, in_vol)
                    for (int64_t co = 0; co < Cout; ++co)
                        for (int64_t z = 0; z < D; ++z)
                            for (int64_t y = 0; y < H; ++y) {
                                const T* srow = gy + (bi * Cout + co) * out_vol +
                                                ((2 * z + pz) * OH + (2 * y + py)) * OW + px;
                                T* drow = gtmp.data() + co * in_vol + (z * H + y) * W;
                                for (int64_t xx = 0; xx < W; ++xx) drow[xx] = srow[2 * xx];
                            }
                    if (wants_grad(x)) {
                        transpose_rm(Cout, Cin, wp.data() + p * Cout * Cin, wpt.data());
                        std::vector<T> dx(static_cast<size_t>(Cin) * in_vol);
                        kern::gemm<T>(Cin, in_vol, Cout, wpt.data(), gtmp.data(), dx.data(),
                                      false);
                        auto& gx = x->ensure_grad();
                        T* gxp = gx.data() + bi * Cin * in_vol;
                        for (int64_t i = 0; i < Cin * in_vol; ++i) gxp[i] += dx[i];
                    }
                    if (wants_grad(w)) {
                        // dW_p (Cin x Cout) = x (Cin x vol) . gtmp^T (vol x Cout)
                        std::vector<T> gt(static_cast<size_t>(in_vol) * Cout);
                        transpose_rm(Cout, in_vol, gtmp.data(), gt.data());
                        std::vector<T> dwp(static_cast<size_t>(Cin) * Cout);
                        kern::gemm<T>(Cin, Cout, in_vol, x->value.data() + bi * Cin * in_vol,
                                      gt.data(), dwp.data(), false);
                        auto& gw = w->ensure_grad();
                        for (int64_t ci = 0; ci < Cin; ++ci)
                            for (int64_t co = 0; co < Cout; ++co)
                                gw[(ci * Cout + co) * 8 + p] += dwp[ci * Cout + co];
                    }
                    if (b && wants_grad(b)) {
                        auto& gb = b->ensure_grad();
                        for (int64_t co = 0; co < Cout; ++co) {
                            T s = T(0);
                            const T* row = gtmp.data() + co * in_vol;
                            for (int64_t i = 0; i < in_vol; ++i) s += row[i];
                            gb[co] += s;
                        }
                    }
                }
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> instance_norm_act(const VarPtr<T>& x, const VarPtr<T>& gamma, const VarPtr<T>& beta,
                            Act act, T eps) {
    const auto& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("instance_norm: expect (B,C,D,H,W)");
    const int64_t B = xs[0], C = xs[1];
    const int64_t vol = xs[2] * xs[3] * xs[4];
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw std::invalid_argument("instance_norm: affine shape mismatch");
    constexpr T kSlope = T(0.01);

    Tensor<T> out(xs);
    auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(B) * C * 2);
#pragma omp parallel for schedule(static) collapse(2)
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < C; ++c) {
            const T* src = x->value.data() + (bi * C + c) * vol;
            T s = T(0), s2 = T(0);
            for (int64_t i = 0; i < vol; ++i) {
                s += src[i];
                s2 += src[i] * src[i];
            }
            const T mu = s / static_cast<T>(vol);
            const T var = std::max(T(0), s2 / static_cast<T>(vol) - mu * mu);
            const T inv = T(1) / std::sqrt(var + eps);
            (*stats)[(bi * C + c) * 2] = mu;
            (*stats)[(bi * C + c) * 2 + 1] = inv;
            const T g = gamma->value[c], be = beta->value[c];
            T* dst = out.data() + (bi * C + c) * vol;
            if (act == Act::LeakyRelu) {
                for (int64_t i = 0; i < vol; ++i) {
                    const T y = (src[i] - mu) * inv * g + be;
                    dst[i] = y >= T(0) ? y : kSlope * y;
                }
            } else {
                for (int64_t i = 0; i < vol; ++i) dst[i] = (src[i] - mu) * inv * g + be;
            }
        }

    auto node = make_op<T>(std::move(out), {x, gamma, beta}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, x, gamma, beta, act, stats, B, C, vol]() {
            const T* gy = self->grad.data();
            auto& gx = x->ensure_grad();
            std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
#pragma omp parallel for schedule(static)
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t bi = 0; bi < B; ++bi) {
                    const T mu = (*stats)[(bi * C + c) * 2];
                    const T inv = (*stats)[(bi * C + c) * 2 + 1];
                    const T g = gamma->value[c], be = beta->value[c];
                    const T* src = x->value.data() + (bi * C + c) * vol;
                    const T* gyc = gy + (bi * C + c) * vol;
                    T* gxc = gx.data() + (bi * C + c) * vol;
                    // dxhat plus channel reductions in one pass
                    T sum_dxh = T(0), sum_dxh_xh = T(0), dg = T(0), db = T(0);
                    for (int64_t i = 0; i < vol; ++i) {
                        const T xh = (src[i] - mu) * inv;
                        T dy = gyc[i];
                        if (act == Act::LeakyRelu) {
                            const T pre = xh * g + be;
                            if (pre < T(0)) dy *= kSlope;
                        }
                        dg += dy * xh;
                        db += dy;
                        const T dxh = dy * g;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                    const T inv_n = T(1) / static_cast<T>(vol);
                    for (int64_t i = 0; i < vol; ++i) {
                        const T xh = (src[i] - mu) * inv;
                        T dy = gyc[i];
                        if (act == Act::LeakyRelu) {
                            const T pre = xh * g + be;
                            if (pre < T(0)) dy *= kSlope;
                        }
                        const T dxh = dy * g;
                        gxc[i] += inv * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
                    }
                    dgamma[c] += dg;
                    dbeta[c] += db;
                }
            }
            if (wants_grad(gamma)) {
                auto& gg = gamma->ensure_grad();
                for (int64_t c = 0; c < C; ++c) gg[c] += dgamma[c];
            }
            if (wants_grad(beta)) {
                auto& gb = beta->ensure_grad();
                for (int64_t c = 0; c < C; ++c) gb[c] += dbeta[c];
            }
        };
    }
    return node;
}

#define TGDM_INSTANTIATE(T)                                                                   \
    template VarPtr<T> conv3d<T>(const VarPtr<T>&, const VarPtr<T>&, const VarPtr<T>&, int); \
    template VarPtr<T> conv1x1<T>(const VarPtr<T>&, const VarPtr<T>&, const VarPtr<T>&,      \
                                  int);                                                      \
    template VarPtr<T> conv_transpose3d_k2s2<T>(const VarPtr<T>&, const VarPtr<T>&,          \
                                                const VarPtr<T>&);                           \
    template VarPtr<T> instance_norm_act<T>(const VarPtr<T>&, const VarPtr<T>&,              \
                                            const VarPtr<T>&, Act, T);

TGDM_INSTANTIATE(float)
TGDM_INSTANTIATE(double)
#undef TGDM_INSTANTIATE

}  // namespace tgdm::nn
