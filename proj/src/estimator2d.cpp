#include "misreg/estimator2d.hpp"

#include <cmath>
#include <numbers>

#include "misreg/fft.hpp"

namespace misreg {

namespace {

using Eigen::MatrixXcd;

// Trigonometric evaluation of a P x P spectrum on the fine shift lattice.
Map2D zoom_eval(const ArrayXXcd& spectrum, Index P, Index R, Index U) {
    const Index m = 2 * R * U + 1;
    MatrixXcd E(m, P);
    for (Index j = 0; j < m; ++j) {
        const Real d = static_cast<Real>(j - R * U) / static_cast<Real>(U);
        for (Index k = 0; k < P; ++k) {
            const Real f = static_cast<Real>(fftutil::freq_index(k, P));
            const Real phase = 2.0 * std::numbers::pi * d * f / static_cast<Real>(P);
            E(j, k) = Complex(std::cos(phase), std::sin(phase));
        }
    }
    MatrixXcd out = E * spectrum.matrix() * E.transpose();
    return out.real().array() / static_cast<Real>(P * P);
}

}  // namespace

CorrMap correlation_map(const ModalIM& measured, const ModalIM& reference, Index R, Index U) {
    if (measured.n_side != reference.n_side)
        throw InputError("correlation_map: grid dimensions differ");
    if (measured.n_modes() != reference.n_modes())
        throw InputError("correlation_map: mode counts differ");
    if (R < 1 || R > measured.n_side / 2)
        throw InputError("correlation_map: search radius must be in [1, n_side/2]");
    if (U < 1 || U > 16) throw InputError("correlation_map: upsample must be in [1, 16]");

    const Index n = measured.n_side;
    Index P = n + 2 * R + 2;
    if (P % 2 == 0) ++P;

    const Map2D wv = (measured.valid && measured.wfs_mask).cast<Real>();
    const Map2D ww = (reference.valid && reference.wfs_mask).cast<Real>();

    ArrayXXcd num_spec = ArrayXXcd::Zero(P, P);
    ArrayXXcd ref_pow = ArrayXXcd::Zero(P, P);
    for (Index m = 0; m < measured.n_modes(); ++m) {
        for (int ch = 0; ch < 2; ++ch) {
            const Map2D& mi = ch == 0 ? measured.slopes_x[m] : measured.slopes_y[m];
            const Map2D& ri = ch == 0 ? reference.slopes_x[m] : reference.slopes_y[m];
            num_spec += fftutil::fft2_padded(wv * mi, P) * fftutil::fft2_padded(ww * ri, P).conjugate();
            ref_pow += fftutil::fft2_padded(ww * ri * ri, P);
        }
    }
    ArrayXXcd den_spec = fftutil::fft2_padded(wv, P) * ref_pow.conjugate();

    if (U > 1) {
        // Anti-alias taper: the slope maps are not band limited, so the raw
        // trigonometric interpolation of the lag surfaces carries a
        // cell-periodic alias ripple that biases sub-cell peaks.
        ArrayXd taper(P);
        for (Index k = 0; k < P; ++k) {
            const Real nu = static_cast<Real>(fftutil::freq_index(k, P)) / static_cast<Real>(P);
            taper(k) = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * nu));
        }
        for (Index i = 0; i < P; ++i)
            for (Index j = 0; j < P; ++j) {
                const Real t = taper(i) * taper(j);
                num_spec(i, j) *= t;
                den_spec(i, j) *= t;
            }
    }

    const Map2D num = zoom_eval(num_spec, P, R, U);
    const Map2D den = zoom_eval(den_spec, P, R, U);

    // reference slope power, the natural scale of the denominator surface
    Real ref_power = 0.0;
    for (Index m = 0; m < reference.n_modes(); ++m)
        ref_power += (ww * (reference.slopes_x[m] * reference.slopes_x[m] +
                            reference.slopes_y[m] * reference.slopes_y[m]))
                         .sum();
    if (!(den.maxCoeff() > 1e-9 * ref_power))
        throw NoOverlapError("correlation_map: masks do not overlap anywhere in the search window");

    CorrMap map;
    map.search_radius = R;
    map.upsample = U;
    const Index msz = 2 * R * U + 1;
    map.values = Map2D::Zero(msz, msz);

    const Real den_floor = 1e-6 * den.maxCoeff();
    bool any_ok = false;
    Real best = 0.0, best_r2 = 0.0;
    Index best_ix = -1, best_iy = -1;
    for (Index iy = 0; iy < msz; ++iy) {
        for (Index ix = 0; ix < msz; ++ix) {
            if (den(iy, ix) < den_floor) continue;  // excluded from the argmax
            const Real v = num(iy, ix) / den(iy, ix);
            map.values(iy, ix) = v;
            const Real dx = map.delta_of(ix), dy = map.delta_of(iy);
            const Real r2 = dx * dx + dy * dy;
            bool take = !any_ok || v > best;
            if (any_ok && v == best) {
                const Real bdx = map.delta_of(best_ix), bdy = map.delta_of(best_iy);
                take = r2 < best_r2 ||
                       (r2 == best_r2 && (dx < bdx || (dx == bdx && dy < bdy)));
            }
            if (take) {
                any_ok = true;
                best = v;
                best_r2 = r2;
                best_ix = ix;
                best_iy = iy;
            }
        }
    }
    if (!any_ok)
        throw NoOverlapError("correlation_map: masks do not overlap anywhere in the search window");

    map.peak = {map.delta_of(best_ix), map.delta_of(best_iy)};
    map.peak_value = best;
    map.boundary_warning = best_ix == 0 || best_iy == 0 || best_ix == msz - 1 || best_iy == msz - 1;
    return map;
}

Misreg estimate_shift(const CorrMap& map) { return map.peak; }

Map2D correlate_fft(const std::vector<Map2D>& a, const std::vector<Map2D>& b) {
    if (a.size() != b.size()) throw InputError("correlate_fft: stack sizes differ");
    if (a.empty()) throw InputError("correlate_fft: empty stacks");
    const Index n = a.front().rows();
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].rows() != n || a[i].cols() != n || b[i].rows() != n || b[i].cols() != n)
            throw InputError("correlate_fft: shapes differ");

    Index P = 2 * n;
    if (P % 2 == 0) ++P;
    ArrayXXcd spec = ArrayXXcd::Zero(P, P);
    for (std::size_t i = 0; i < a.size(); ++i)
        spec += fftutil::fft2_padded(a[i], P) * fftutil::fft2_padded(b[i], P).conjugate();
    const ArrayXXcd lag = fftutil::fft2(spec, true);

    Map2D out(2 * n - 1, 2 * n - 1);
    for (Index dy = -(n - 1); dy <= n - 1; ++dy)
        for (Index dx = -(n - 1); dx <= n - 1; ++dx)
            out(dy + n - 1, dx + n - 1) = lag((dy + P) % P, (dx + P) % P).real();
    return out;
}

}  // namespace misreg
