#pragma once

#include <cstdint>

namespace tgdm::nn::kern {

/// True when the AVX-512 fast paths were compiled in and the CPU supports them.
bool avx512_available();

/// C (M×N) = A (M×K) · B (K×N), row-major contiguous; accumulate adds into C.
void gemm_f32(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
              bool accumulate);
void gemm_f64(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C,
              bool accumulate);

template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    if constexpr (sizeof(T) == sizeof(float))
        gemm_f32(M, N, K, reinterpret_cast<const float*>(A), reinterpret_cast<const float*>(B),
                 reinterpret_cast<float*>(C), accumulate);
    else
        gemm_f64(M, N, K, reinterpret_cast<const double*>(A), reinterpret_cast<const double*>(B),
                 reinterpret_cast<double*>(C), accumulate);
}

// 3x3x3 stride-1 convolution on a zero-padded input.
//   x_pad: (Cin, D+2, H+2, W+2), w: (Cout, Cin, 27) with offsets dz-major,
//   out:   (Cout, D, H, W)
void conv3d_k3s1_fwd_f32(const float* x_pad, const float* w, float* out, int64_t Cin,
                         int64_t Cout, int64_t D, int64_t H, int64_t W);
void conv3d_k3s1_fwd_f64(const double* x_pad, const double* w, double* out, int64_t Cin,
                         int64_t Cout, int64_t D, int64_t H, int64_t W);

// Weight gradient of the same convolution: dw (Cout, Cin, 27) += dy * shifted x.
void conv3d_k3s1_wgrad_f32(const float* x_pad, const float* dy, float* dw, int64_t Cin,
                           int64_t Cout, int64_t D, int64_t H, int64_t W);
void conv3d_k3s1_wgrad_f64(const double* x_pad, const double* dy, double* dw, int64_t Cin,
                           int64_t Cout, int64_t D, int64_t H, int64_t W);

template <typename T>
void conv3d_k3s1_fwd(const T* x_pad, const T* w, T* out, int64_t Cin, int64_t Cout, int64_t D,
                     int64_t H, int64_t W) {
    if constexpr (sizeof(T) == sizeof(float))
        conv3d_k3s1_fwd_f32(reinterpret_cast<const float*>(x_pad),
                            reinterpret_cast<const float*>(w), reinterpret_cast<float*>(out), Cin,
                            Cout, D, H, W);
    else
        conv3d_k3s1_fwd_f64(reinterpret_cast<const double*>(x_pad),
                            reinterpret_cast<const double*>(w), reinterpret_cast<double*>(out),
                            Cin, Cout, D, H, W);
}

template <typename T>
void conv3d_k3s1_wgrad(const T* x_pad, const T* dy, T* dw, int64_t Cin, int64_t Cout, int64_t D,
                       int64_t H, int64_t W) {
    if constexpr (sizeof(T) == sizeof(float))
        conv3d_k3s1_wgrad_f32(reinterpret_cast<const float*>(x_pad),
                              reinterpret_cast<const float*>(dy), reinterpret_cast<float*>(dw),
                              Cin, Cout, D, H, W);
    else
        conv3d_k3s1_wgrad_f64(reinterpret_cast<const double*>(x_pad),
                              reinterpret_cast<const double*>(dy), reinterpret_cast<double*>(dw),
                              Cin, Cout, D, H, W);
}

// Internal: AVX-512 implementations (defined only when the TU is compiled in).
void gemm_f32_avx512(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                     bool accumulate);
void conv3d_k3s1_fwd_f32_avx512(const float* x_pad, const float* w, float* out, int64_t Cin,
                                int64_t Cout, int64_t D, int64_t H, int64_t W);
void conv3d_k3s1_wgrad_f32_avx512(const float* x_pad, const float* dy, float* dw, int64_t Cin,
                                  int64_t Cout, int64_t D, int64_t H, int64_t W);

}  // namespace tgdm::nn::kern
