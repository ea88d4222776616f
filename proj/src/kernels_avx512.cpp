// AVX-512 kernels for the hot convolution and GEMM paths. This TU is compiled
// with -mavx512f/-mavx512bw and only entered after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "tgdm/kernels.hpp"

#if defined(_OPENMP)
#include <omp.h>
#else
namespace {
int omp_get_max_threads() { return 1; }
int omp_get_thread_num() { return 0; }
}  // namespace
#endif

namespace tgdm::nn::kern {

namespace {

inline __mmask16 tail_mask(int64_t rem) {
    return static_cast<__mmask16>((1u << rem) - 1u);
}

}  // namespace

void gemm_f32_avx512(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                     bool accumulate) {
    // A is packed transposed once so broadcasts stream contiguously.
    std::vector<float> at(static_cast<size_t>(K) * M);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) at[static_cast<size_t>(k) * M + i] = A[i * K + k];

    for (int64_t i0 = 0; i0 < M; i0 += 16) {
        const int64_t ib = std::min<int64_t>(16, M - i0);
        for (int64_t j0 = 0; j0 < N; j0 += 32) {
            const int64_t jb = std::min<int64_t>(32, N - j0);
            const int64_t jb0 = std::min<int64_t>(16, jb);
            const int64_t jb1 = jb - jb0;
            const __mmask16 m0 = tail_mask(jb0);
            const __mmask16 m1 = tail_mask(jb1);
            __m512 acc[16][2];
            for (int64_t r = 0; r < ib; ++r) {
                if (accumulate) {
                    acc[r][0] = _mm512_maskz_loadu_ps(m0, C + (i0 + r) * N + j0);
                    acc[r][1] = jb1 ? _mm512_maskz_loadu_ps(m1, C + (i0 + r) * N + j0 + 16)
                                    : _mm512_setzero_ps();
                } else {
                    acc[r][0] = _mm512_setzero_ps();
                    acc[r][1] = _mm512_setzero_ps();
                }
            }
            for (int64_t k = 0; k < K; ++k) {
                const __m512 b0 = _mm512_maskz_loadu_ps(m0, B + k * N + j0);
                const __m512 b1 =
                    jb1 ? _mm512_maskz_loadu_ps(m1, B + k * N + j0 + 16) : _mm512_setzero_ps();
                const float* arow = at.data() + static_cast<size_t>(k) * M + i0;
                for (int64_t r = 0; r < ib; ++r) {
                    const __m512 av = _mm512_set1_ps(arow[r]);
                    acc[r][0] = _mm512_fmadd_ps(av, b0, acc[r][0]);
                    if (jb1) acc[r][1] = _mm512_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for (int64_t r = 0; r < ib; ++r) {
                _mm512_mask_storeu_ps(C + (i0 + r) * N + j0, m0, acc[r][0]);
                if (jb1) _mm512_mask_storeu_ps(C + (i0 + r) * N + j0 + 16, m1, acc[r][1]);
            }
        }
    }
}

void conv3d_k3s1_fwd_f32_avx512(const float* x_pad, const float* w, float* out, int64_t Cin,
                                int64_t Cout, int64_t D, int64_t H, int64_t W) {
    const int64_t Hp = H + 2, Wp = W + 2;
    const int64_t plane_p = Hp * Wp, vol_p = (D + 2) * plane_p;
    const int64_t plane = H * W, vol = D * H * W;

    // Repack weights as (Cin*27, Cout) so the co loop broadcasts contiguously.
    std::vector<float> wt(static_cast<size_t>(Cin) * 27 * Cout);
    for (int64_t co = 0; co < Cout; ++co)
        for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t off = 0; off < 27; ++off)
                wt[(static_cast<size_t>(ci) * 27 + off) * Cout + co] = w[(co * Cin + ci) * 27 + off];

#pragma omp parallel for schedule(static)
    for (int64_t z = 0; z < D; ++z) {
        for (int64_t co0 = 0; co0 < Cout; co0 += 16) {
            const int64_t cb = std::min<int64_t>(16, Cout - co0);
            for (int64_t y = 0; y < H; ++y) {
                for (int64_t x0 = 0; x0 < W; x0 += 16) {
                    const int64_t xb = std::min<int64_t>(16, W - x0);
                    const __mmask16 mask = tail_mask(xb);
                    __m512 acc[16];
                    for (int64_t r = 0; r < cb; ++r) acc[r] = _mm512_setzero_ps();
                    const float* wk = wt.data() + co0;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const float* xc = x_pad + ci * vol_p;
                        for (int64_t dz = 0; dz < 3; ++dz) {
                            for (int64_t dy = 0; dy < 3; ++dy) {
                                const float* xrow = xc + (z + dz) * plane_p + (y + dy) * Wp + x0;
                                for (int64_t dx = 0; dx < 3; ++dx) {
                                    const __m512 b = _mm512_loadu_ps(xrow + dx);
                                    const float* wcol =
                                        wk + ((ci * 27 + dz * 9 + dy * 3 + dx)) * Cout;
                                    for (int64_t r = 0; r < cb; ++r)
                                        acc[r] = _mm512_fmadd_ps(_mm512_set1_ps(wcol[r]), b,
                                                                 acc[r]);
                                }
                            }
                        }
                    }
                    for (int64_t r = 0; r < cb; ++r)
                        _mm512_mask_storeu_ps(out + (co0 + r) * vol + z * plane + y * W + x0,
                                              mask, acc[r]);
                }
            }
        }
    }
}

void conv3d_k3s1_wgrad_f32_avx512(const float* x_pad, const float* dy, float* dw, int64_t Cin,
                                  int64_t Cout, int64_t D, int64_t H, int64_t W) {
    const int64_t Hp = H + 2, Wp = W + 2;
    const int64_t plane_p = Hp * Wp, vol_p = (D + 2) * plane_p;
    const int64_t plane = H * W, vol = D * H * W;

    const int n_threads = std::max(1, omp_get_max_threads());
    std::vector<std::vector<float>> partial(static_cast<size_t>(n_threads));
    for (auto& p : partial) p.assign(static_cast<size_t>(Cout) * Cin * 27, 0.0f);

#pragma omp parallel for schedule(static)
    for (int64_t z = 0; z < D; ++z) {
        float* dwt = partial[static_cast<size_t>(omp_get_thread_num())].data();
        for (int64_t co0 = 0; co0 < Cout; co0 += 16) {
            const int64_t cb = std::min<int64_t>(16, Cout - co0);
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const float* xc = x_pad + ci * vol_p;
                for (int64_t off = 0; off < 27; ++off) {
                    const int64_t dz = off / 9, dyy = (off / 3) % 3, dx = off % 3;
                    __m512 acc[16];
                    for (int64_t r = 0; r < cb; ++r) acc[r] = _mm512_setzero_ps();
                    for (int64_t y = 0; y < H; ++y) {
                        const float* xrow = xc + (z + dz) * plane_p + (y + dyy) * Wp + dx;
                        const float* gbase = dy + z * plane + y * W;
                        for (int64_t x0 = 0; x0 < W; x0 += 16) {
                            const int64_t xb = std::min<int64_t>(16, W - x0);
                            const __mmask16 mask = tail_mask(xb);
                            const __m512 xv = _mm512_maskz_loadu_ps(mask, xrow + x0);
                            for (int64_t r = 0; r < cb; ++r) {
                                const __m512 g = _mm512_maskz_loadu_ps(
                                    mask, gbase + (co0 + r) * vol + x0);
                                acc[r] = _mm512_fmadd_ps(g, xv, acc[r]);
                            }
                        }
                    }
                    for (int64_t r = 0; r < cb; ++r)
                        dwt[((co0 + r) * Cin + ci) * 27 + off] += _mm512_reduce_add_ps(acc[r]);
                }
            }
        }
    }
    // Deterministic reduction: fixed thread order.
    for (const auto& p : partial)
        for (size_t i = 0; i < p.size(); ++i) dw[i] += p[i];
}

}  // namespace tgdm::nn::kern
