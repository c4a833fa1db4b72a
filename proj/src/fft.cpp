#include "fft.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace melrefine::detail {

RealFft::RealFft(std::size_t n) : n_(n) {
    if (n < 2) throw std::invalid_argument("fft: size must be >= 2");
    real_ = fftw_alloc_real(n);
    spectrum_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spectrum_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spectrum_, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spectrum_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
    std::copy_n(in.data(), n_, real_);
    fftw_execute(forward_);
    std::memcpy(static_cast<void*>(out.data()), spectrum_, sizeof(fftw_complex) * (n_ / 2 + 1));
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    std::memcpy(spectrum_, static_cast<const void*>(in.data()), sizeof(fftw_complex) * (n_ / 2 + 1));
    // DC and Nyquist bins of a real signal are real.
    spectrum_[0][1] = 0.0;
    spectrum_[n_ / 2][1] = 0.0;
    fftw_execute(inverse_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * scale;
}

}  // namespace melrefine::detail
