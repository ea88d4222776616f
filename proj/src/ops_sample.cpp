#include <cmath>
#include <stdexcept>

#include "autodiff_internal.hpp"
#include "tgdm/autodiff.hpp"

namespace tgdm::nn {

using detail::make_op;
using detail::wants_grad;

namespace {

/// Per-axis interpolation setup: voxel pair (i0, i1), fraction f, and the
/// derivative mask (0 where the coordinate clamps at the border).
template <typename T>
struct AxisInterp {
    int64_t i0, i1;
    T f, dmask;
};

template <typename T>
AxisInterp<T> axis_interp(T q, int64_t size) {
    // [0,1] normalized -> continuous voxel coordinate (half-pixel centers)
    T g = q * static_cast<T>(size) - T(0.5);
    T dmask = T(1);
    if (g <= T(0)) {
        g = T(0);
        dmask = T(0);
    } else if (g >= static_cast<T>(size - 1)) {
        g = static_cast<T>(size - 1);
        dmask = T(0);
    }
    int64_t i0 = static_cast<int64_t>(std::floor(g));
    if (i0 > size - 2) i0 = std::max<int64_t>(0, size - 2);
    const T f = g - static_cast<T>(i0);
    return {i0, std::min(i0 + 1, size - 1), f, dmask};
}

}  // namespace

template <typename T>
VarPtr<T> grid_sample_trilinear(const VarPtr<T>& feat, const VarPtr<T>& coords) {
    const auto& fs = feat->value.shape();
    const auto& cs = coords->value.shape();
    if (fs.size() != 5 || cs.size() != 3 || cs[2] != 3)
        throw std::invalid_argument("grid_sample: expect feat (B,C,D,H,W), coords (B,N,3)");
    if (fs[0] != cs[0]) throw std::invalid_argument("grid_sample: batch mismatch");
    const int64_t B = fs[0], C = fs[1], D = fs[2], H = fs[3], W = fs[4], N = cs[1];
    const int64_t vol = D * H * W, plane = H * W;

    Tensor<T> out({B, N, C});
    for (int64_t b = 0; b < B; ++b) {
        const T* fb = feat->value.data() + b * C * vol;
        for (int64_t n = 0; n < N; ++n) {
            const T* q = coords->value.data() + (b * N + n) * 3;
            const auto az = axis_interp(q[0], D), ay = axis_interp(q[1], H),
                       ax = axis_interp(q[2], W);
            T* on = out.data() + (b * N + n) * C;
            for (int64_t c = 0; c < C; ++c) {
                const T* fc = fb + c * vol;
                auto at = [&](int64_t z, int64_t y, int64_t x) {
                    return fc[z * plane + y * W + x];
                };
                const T c00 = at(az.i0, ay.i0, ax.i0) * (T(1) - ax.f) +
                              at(az.i0, ay.i0, ax.i1) * ax.f;
                const T c01 = at(az.i0, ay.i1, ax.i0) * (T(1) - ax.f) +
                              at(az.i0, ay.i1, ax.i1) * ax.f;
                const T c10 = at(az.i1, ay.i0, ax.i0) * (T(1) - ax.f) +
                              at(az.i1, ay.i0, ax.i1) * ax.f;
                const T c11 = at(az.i1, ay.i1, ax.i0) * (T(1) - ax.f) +
                              at(az.i1, ay.i1, ax.i1) * ax.f;
                const T c0 = c00 * (T(1) - ay.f) + c01 * ay.f;
                const T c1 = c10 * (T(1) - ay.f) + c11 * ay.f;
                on[c] = c0 * (T(1) - az.f) + c1 * az.f;
            }
        }
    }

    auto node = make_op<T>(std::move(out), {feat, coords}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, feat, coords, B, C, D, H, W, N, vol, plane]() {
            const T* gy = self->grad.data();
            for (int64_t b = 0; b < B; ++b) {
                const T* fb = feat->value.data() + b * C * vol;
                for (int64_t n = 0; n < N; ++n) {
                    const T* q = coords->value.data() + (b * N + n) * 3;
                    const auto az = axis_interp(q[0], D), ay = axis_interp(q[1], H),
                               ax = axis_interp(q[2], W);
                    const T wz[2] = {T(1) - az.f, az.f};
                    const T wy[2] = {T(1) - ay.f, ay.f};
                    const T wx[2] = {T(1) - ax.f, ax.f};
                    const int64_t iz[2] = {az.i0, az.i1}, iy[2] = {ay.i0, ay.i1},
                                  ix[2] = {ax.i0, ax.i1};
                    const T* gn = gy + (b * N + n) * C;
                    T dgz = T(0), dgy = T(0), dgx = T(0);
                    for (int64_t c = 0; c < C; ++c) {
                        const T g = gn[c];
                        if (g == T(0)) continue;
                        const T* fc = fb + c * vol;
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                    const int64_t idx =
                                        iz[kz] * plane + iy[ky] * W + ix[kx];
                                    const T wgt = wz[kz] * wy[ky] * wx[kx];
                                    if (wants_grad(feat))
                                        feat->ensure_grad()[b * C * vol + c * vol + idx] +=
                                            g * wgt;
                                    if (wants_grad(coords)) {
                                        const T fv = fc[idx];
                                        const T sz = kz ? T(1) : T(-1);
                                        const T sy = ky ? T(1) : T(-1);
                                        const T sx = kx ? T(1) : T(-1);
                                        dgz += g * fv * sz * wy[ky] * wx[kx];
                                        dgy += g * fv * wz[kz] * sy * wx[kx];
                                        dgx += g * fv * wz[kz] * wy[ky] * sx;
                                    }
                                }
                    }
                    if (wants_grad(coords)) {
                        auto& gc = coords->ensure_grad();
                        gc[(b * N + n) * 3 + 0] += dgz * az.dmask * static_cast<T>(D);
                        gc[(b * N + n) * 3 + 1] += dgy * ay.dmask * static_cast<T>(H);
                        gc[(b * N + n) * 3 + 2] += dgx * ax.dmask * static_cast<T>(W);
                    }
                }
            }
        };
    }
    return node;
}

template <typename T>
VarPtr<T> scatter_trilinear_add(const VarPtr<T>& base, const VarPtr<T>& coords,
                                const VarPtr<T>& values) {
    const auto& fs = base->value.shape();
    const auto& cs = coords->value.shape();
    const auto& vs = values->value.shape();
    if (fs.size() != 5 || cs.size() != 3 || cs[2] != 3 || vs.size() != 3)
        throw std::invalid_argument("scatter_add: bad shapes");
    const int64_t B = fs[0], C = fs[1], D = fs[2], H = fs[3], W = fs[4], N = cs[1];
    if (vs[0] != B || vs[1] != N || vs[2] != C)
        throw std::invalid_argument("scatter_add: values must be (B,N,C)");
    const int64_t vol = D * H * W, plane = H * W;

    Tensor<T> out = base->value;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t n = 0; n < N; ++n) {
            const T* q = coords->value.data() + (b * N + n) * 3;
            const auto az = axis_interp(q[0], D), ay = axis_interp(q[1], H),
                       ax = axis_interp(q[2], W);
            const T wz[2] = {T(1) - az.f, az.f};
            const T wy[2] = {T(1) - ay.f, ay.f};
            const T wx[2] = {T(1) - ax.f, ax.f};
            const int64_t iz[2] = {az.i0, az.i1}, iy[2] = {ay.i0, ay.i1},
                          ix[2] = {ax.i0, ax.i1};
            const T* vn = values->value.data() + (b * N + n) * C;
            for (int64_t c = 0; c < C; ++c) {
                T* oc = out.data() + (b * C + c) * vol;
                const T v = vn[c];
                for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx)
                            oc[iz[kz] * plane + iy[ky] * W + ix[kx]] +=
                                v * wz[kz] * wy[ky] * wx[kx];
            }
        }
    }

    auto node = make_op<T>(std::move(out), {base, coords, values}, nullptr);
    if (node->needs_grad) {
        Node<T>* self = node.get();
        node->backward_fn = [self, base, coords, values, B, C, D, H, W, N, vol, plane]() {
            const T* gy = self->grad.data();
            if (wants_grad(base)) {
                auto& gb = base->ensure_grad();
                const int64_t total = B * C * vol;
#pragma omp parallel for schedule(static)
                for (int64_t i = 0; i < total; ++i) gb[i] += gy[i];
            }
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t n = 0; n < N; ++n) {
                    const T* q = coords->value.data() + (b * N + n) * 3;
                    const auto az = axis_interp(q[0], D), ay = axis_interp(q[1], H),
                               ax = axis_interp(q[2], W);
                    const T wz[2] = {T(1) - az.f, az.f};
                    const T wy[2] = {T(1) - ay.f, ay.f};
                    const T wx[2] = {T(1) - ax.f, ax.f};
                    const int64_t iz[2] = {az.i0, az.i1}, iy[2] = {ay.i0, ay.i1},
                                  ix[2] = {ax.i0, ax.i1};
                    const T* vn = values->value.data() + (b * N + n) * C;
                    T dgz = T(0), dgy = T(0), dgx = T(0);
                    for (int64_t c = 0; c < C; ++c) {
                        const T* gc = gy + (b * C + c) * vol;
                        T dval = T(0);
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                    const T g =
                                        gc[iz[kz] * plane + iy[ky] * W + ix[kx]];
                                    dval += g * wz[kz] * wy[ky] * wx[kx];
                                    if (wants_grad(coords)) {
                                        const T sz = kz ? T(1) : T(-1);
                                        const T sy = ky ? T(1) : T(-1);
                                        const T sx = kx ? T(1) : T(-1);
                                        const T v = vn[c];
                                        dgz += g * v * sz * wy[ky] * wx[kx];
                                        dgy += g * v * wz[kz] * sy * wx[kx];
                                        dgx += g * v * wz[kz] * wy[ky] * sx;
                                    }
                                }
                        if (wants_grad(values))
                            values->ensure_grad()[(b * N + n) * C + c] += dval;
                    }
                    if (wants_grad(coords)) {
                        auto& gc = coords->ensure_grad();
                        gc[(b * N + n) * 3 + 0] += dgz * az.dmask * static_cast<T>(D);
                        gc[(b * N + n) * 3 + 1] += dgy * ay.dmask * static_cast<T>(H);
                        gc[(b * N + n) * 3 + 2] += dgx * ax.dmask * static_cast<T>(W);
                    }
                }
            }
        };
    }
    return node;
}

#define TGDM_INSTANTIATE(T)                                                              \
    template VarPtr<T> grid_sample_trilinear<T>(const VarPtr<T>&, const VarPtr<T>&);     \
    template VarPtr<T> scatter_trilinear_add<T>(const VarPtr<T>&, const VarPtr<T>&,      \
                                                const VarPtr<T>&);

TGDM_INSTANTIATE(float)
TGDM_INSTANTIATE(double)
#undef TGDM_INSTANTIATE

}  // namespace tgdm::nn
