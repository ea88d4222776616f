#include "tgdm/kernels.hpp"

#include <cstring>
#include <vector>

namespace tgdm::nn::kern {

bool avx512_available() {
#if defined(TGDM_HAVE_AVX512_TU)
    return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512bw");
#else
    return false;
#endif
}

namespace {

// Cache-blocked reference GEMM; serves doubles and non-AVX hosts.
template <typename T>
void gemm_generic(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
                  bool accumulate) {
    constexpr int64_t kBlockK = 64;
    if (!accumulate)
        for (int64_t i = 0; i < M * N; ++i) C[i] = T(0);
    for (int64_t k0 = 0; k0 < K; k0 += kBlockK) {
        const int64_t k1 = std::min(K, k0 + kBlockK);
        for (int64_t i = 0; i < M; ++i) {
            for (int64_t k = k0; k < k1; ++k) {
                const T a = A[i * K + k];
                if (a == T(0)) continue;
                const T* brow = B + k * N;
                T* crow = C + i * N;
                for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
            }
        }
    }
}

template <typename T>
void conv_fwd_generic(const T* x_pad, const T* w, T* out, int64_t Cin, int64_t Cout, int64_t D,
                      int64_t H, int64_t W) {
    const int64_t Hp = H + 2, Wp = W + 2;
    const int64_t plane_p = Hp * Wp, vol_p = (D + 2) * plane_p;
    const int64_t plane = H * W, vol = D * H * W;
#pragma omp parallel for schedule(static)
    for (int64_t z = 0; z < D; ++z) {
        std::vector<T> row(W);
        for (int64_t co = 0; co < Cout; ++co) {
            for (int64_t y = 0; y < H; ++y) {
                std::fill(row.begin(), row.end(), T(0));
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const T* wbase = w + (co * Cin + ci) * 27;
                    const T* xc = x_pad + ci * vol_p;
                    for (int64_t dz = 0; dz < 3; ++dz) {
                        for (int64_t dy = 0; dy < 3; ++dy) {
                            const T* xrow = xc + (z + dz) * plane_p + (y + dy) * Wp;
                            const T w0 = wbase[dz * 9 + dy * 3 + 0];
                            const T w1 = wbase[dz * 9 + dy * 3 + 1];
                            const T w2 = wbase[dz * 9 + dy * 3 + 2];
                            for (int64_t x = 0; x < W; ++x)
                                row[x] += w0 * xrow[x] + w1 * xrow[x + 1] + w2 * xrow[x + 2];
                        }
                    }
                }
                T* orow = out + co * vol + z * plane + y * W;
                std::memcpy(orow, row.data(), sizeof(T) * W);
            }
        }
    }
}

template <typename T>
void conv_wgrad_generic(const T* x_pad, const T* dy, T* dw, int64_t Cin, int64_t Cout, int64_t D,
                        int64_t H, int64_t W) {
    const int64_t Hp = H + 2, Wp = W + 2;
    const int64_t plane_p = Hp * Wp, vol_p = (D + 2) * plane_p;
    const int64_t plane = H * W, vol = D * H * W;
    for (int64_t co = 0; co < Cout; ++co) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            T* wbase = dw + (co * Cin + ci) * 27;
            const T* xc = x_pad + ci * vol_p;
            const T* dyc = dy + co * vol;
            for (int64_t dz = 0; dz < 3; ++dz) {
                for (int64_t dy_ = 0; dy_ < 3; ++dy_) {
                    T acc0 = 0, acc1 = 0, acc2 = 0;
                    for (int64_t z = 0; z < D; ++z) {
                        for (int64_t y = 0; y < H; ++y) {
                            const T* xrow = xc + (z + dz) * plane_p + (y + dy_) * Wp;
                            const T* grow = dyc + z * plane + y * W;
                            for (int64_t x = 0; x < W; ++x) {
                                const T g = grow[x];
                                acc0 += g * xrow[x];
                                acc1 += g * xrow[x + 1];
                                acc2 += g * xrow[x + 2];
                            }
                        }
                    }
                    wbase[dz * 9 + dy_ * 3 + 0] += acc0;
                    wbase[dz * 9 + dy_ * 3 + 1] += acc1;
                    wbase[dz * 9 + dy_ * 3 + 2] += acc2;
                }
            }
        }
    }
}

}  // namespace

void gemm_f32(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
              bool accumulate) {
#if defined(TGDM_HAVE_AVX512_TU)
    if (avx512_available()) {
        gemm_f32_avx512(M, N, K, A, B, C, accumulate);
        return;
    }
#endif
    gemm_generic(M, N, K, A, B, C, accumulate);
}

void gemm_f64(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C,
              bool accumulate) {
    gemm_generic(M, N, K, A, B, C, accumulate);
}

void conv3d_k3s1_fwd_f32(const float* x_pad, const float* w, float* out, int64_t Cin,
                         int64_t Cout, int64_t D, int64_t H, int64_t W) {
#if defined(TGDM_HAVE_AVX512_TU)
    if (avx512_available() && W >= 8) {
        conv3d_k3s1_fwd_f32_avx512(x_pad, w, out, Cin, Cout, D, H, W);
        return;
    }
#endif
    conv_fwd_generic(x_pad, w, out, Cin, Cout, D, H, W);
}

void conv3d_k3s1_fwd_f64(const double* x_pad, const double* w, double* out, int64_t Cin,
                         int64_t Cout, int64_t D, int64_t H, int64_t W) {
    conv_fwd_generic(x_pad, w, out, Cin, Cout, D, H, W);
}

void conv3d_k3s1_wgrad_f32(const float* x_pad, const float* dy, float* dw, int64_t Cin,
                           int64_t Cout, int64_t D, int64_t H, int64_t W) {
#if defined(TGDM_HAVE_AVX512_TU)
    if (avx512_available() && W >= 8) {
        conv3d_k3s1_wgrad_f32_avx512(x_pad, dy, dw, Cin, Cout, D, H, W);
        return;
    }
#endif
    conv_wgrad_generic(x_pad, dy, dw, Cin, Cout, D, H, W);
}

void conv3d_k3s1_wgrad_f64(const double* x_pad, const double* dy, double* dw, int64_t Cin,
                           int64_t Cout, int64_t D, int64_t H, int64_t W) {
    conv_wgrad_generic(x_pad, dy, dw, Cin, Cout, D, H, W);
}

}  // namespace tgdm::nn::kern
