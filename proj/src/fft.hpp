#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include <fftw3.h>

namespace melrefine::detail {

/// Real-input FFT of a fixed size. Planned once on owned aligned buffers so
/// that repeated transforms follow identical code paths.
class RealFft {
public:
    explicit RealFft(std::size_t n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::size_t size() const noexcept { return n_; }

    /// n real inputs -> n/2 + 1 bins.
    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    /// n/2 + 1 bins -> n real outputs, scaled by 1/n.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

private:
    std::size_t n_;
    double* real_;
    fftw_complex* spectrum_;
    fftw_plan forward_;
    fftw_plan inverse_;
};

}  // namespace melrefine::detail
