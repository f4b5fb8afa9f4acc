#ifndef MISREG_FFT_HPP
#define MISREG_FFT_HPP

#include <unsupported/Eigen/FFT>

#include "misreg/types.hpp"

namespace misreg::fftutil {

inline Eigen::FFT<Real>& engine() {
    thread_local Eigen::FFT<Real> fft;
    return fft;
}

inline VectorXcd fft(const VectorXcd& in) {
    VectorXcd out(in.size());
    engine().fwd(out, in);
    return out;
}

inline VectorXcd ifft(const VectorXcd& in) {
    VectorXcd out(in.size());
    engine().inv(out, in);
    return out;
}

/// Spectrum of a real segment at the positive-frequency bins 1..n/2.
inline VectorXcd spectrum_positive(const VectorXd& segment) {
    VectorXcd full = fft(VectorXcd(segment.cast<Complex>()));
    return full.segment(1, segment.size() / 2);
}

inline ArrayXXcd fft2(const ArrayXXcd& in, bool inverse = false) {
    ArrayXXcd work = in;
    VectorXcd tmp(work.rows()), out(work.rows());
    auto& fft = engine();
    for (Index j = 0; j < work.cols(); ++j) {
        tmp = work.col(j).matrix();
        inverse ? fft.inv(out, tmp) : fft.fwd(out, tmp);
        work.col(j) = out.array();
    }
    tmp.resize(work.cols());
    out.resize(work.cols());
    for (Index i = 0; i < work.rows(); ++i) {
        tmp = work.row(i).matrix().transpose();
        inverse ? fft.inv(out, tmp) : fft.fwd(out, tmp);
        work.row(i) = out.array().transpose();
    }
    return work;
}

/// Forward 2D DFT of a real map zero-padded to pad x pad.
inline ArrayXXcd fft2_padded(const Map2D& in, Index pad) {
    ArrayXXcd buf = ArrayXXcd::Zero(pad, pad);
    buf.topLeftCorner(in.rows(), in.cols()) = in.cast<Complex>();
    return fft2(buf);
}

/// Signed DFT frequency index for bin i of an n-point transform.
inline Index freq_index(Index i, Index n) { return i <= n / 2 ? i : i - n; }

}  // namespace misreg::fftutil

#endif
