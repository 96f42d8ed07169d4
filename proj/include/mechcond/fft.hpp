#pragma once

// Radix-2 complex FFT for power-of-two sizes.
//
// All spectral grids in this library are power-of-two by construction, so a
// compact iterative Cooley-Tukey transform with a cached twiddle table is
// sufficient and keeps results bit-deterministic across runs.

#include <complex>
#include <cstddef>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace mechcond {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

// Twiddle factors e^{-2*pi*i*k/n} for k < n/2, cached per size.
inline const std::vector<cplx>& twiddles(std::size_t n) {
    static std::mutex mtx;
    static std::unordered_map<std::size_t, std::vector<cplx>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<cplx> tw(n / 2);
    const double step = -2.0 * 3.14159265358979323846 / double(n);
    for (std::size_t k = 0; k < n / 2; ++k)
        tw[k] = std::polar(1.0, step * double(k));
    return cache.emplace(n, std::move(tw)).first->second;
}

}  // namespace detail

// In-place transform. forward: X[j] = sum_m x[m] e^{-2 pi i j m / n};
// inverse applies the conjugate kernel and the 1/n factor.
inline void fft_inplace(std::vector<cplx>& x, bool inverse = false) {
    const std::size_t n = x.size();
    if (!is_pow2(n)) throw std::invalid_argument("fft_inplace: size must be a power of two");
    if (n < 2) return;

    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }

    const auto& tw = detail::twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t stride = n / len;
        for (std::size_t base = 0; base < n; base += len) {
            for (std::size_t k = 0; k < half; ++k) {
                cplx w = tw[k * stride];
                if (inverse) w = std::conj(w);
                const cplx u = x[base + k];
                const cplx v = x[base + k + half] * w;
                x[base + k] = u + v;
                x[base + k + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double s = 1.0 / double(n);
        for (auto& v : x) v *= s;
    }
}

inline std::vector<cplx> fft(std::vector<cplx> x, bool inverse = false) {
    fft_inplace(x, inverse);
    return x;
}

}  // namespace mechcond
