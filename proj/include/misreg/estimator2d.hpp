#ifndef MISREG_ESTIMATOR2D_HPP
#define MISREG_ESTIMATOR2D_HPP

#include <vector>

#include "misreg/forward_model.hpp"

namespace misreg {

/// Weighted modal correlation ratio alpha(delta) on a (2RU+1)^2 lattice of
/// candidate shifts, delta = (index - RU)/U subaperture cells.
struct CorrMap {
    Map2D values;  // (row, col) = (dy, dx) indices
    Index search_radius = 0;
    Index upsample = 1;
    Misreg peak;
    Real peak_value = 0.0;
    bool boundary_warning = false;

    Real delta_of(Index i) const {
        return static_cast<Real>(i - search_radius * upsample) / static_cast<Real>(upsample);
    }
};

/// Ratio of modal sums of masked 2D cross-correlations between the measured
/// and reference IMs, both slope channels summed. For U > 1 the integer-lag
/// numerator and denominator surfaces are evaluated on the fine lattice by
/// Hann-tapered trigonometric interpolation, which is identical to
/// correlating against the Fourier-interpolated reference.
CorrMap correlation_map(const ModalIM& measured, const ModalIM& reference, Index R, Index U);

/// Position of the global maximum, in subaperture-pitch units (single pass).
Misreg estimate_shift(const CorrMap& map);

/// Sum over the stack of zero-padded FFT cross-correlations
/// c(delta) = sum_m sum_x a_m(x) b_m(x - delta), full (2n-1)^2 lag surface
/// with delta = 0 at the center.
Map2D correlate_fft(const std::vector<Map2D>& a, const std::vector<Map2D>& b);

}  // namespace misreg

#endif
