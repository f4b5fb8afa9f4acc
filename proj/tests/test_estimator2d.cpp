#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "misreg/estimator2d.hpp"
#include "misreg/presets.hpp"

using namespace misreg;

namespace {

// O(N^4) direct evaluation of the weighted modal correlation ratio at integer
// lags, the independent oracle for the FFT path.
Map2D direct_alpha(const ModalIM& meas, const ModalIM& ref, Index R) {
    const Index n = meas.n_side;
    const Map2D wv = (meas.valid && meas.wfs_mask).cast<Real>();
    const Map2D ww = (ref.valid && ref.wfs_mask).cast<Real>();
    Map2D num = Map2D::Zero(2 * R + 1, 2 * R + 1);
    Map2D den = Map2D::Zero(2 * R + 1, 2 * R + 1);
    for (Index dy = -R; dy <= R; ++dy)
        for (Index dx = -R; dx <= R; ++dx)
            for (Index m = 0; m < meas.n_modes(); ++m)
                for (int ch = 0; ch < 2; ++ch) {
                    const Map2D& mi = ch == 0 ? meas.slopes_x[m] : meas.slopes_y[m];
                    const Map2D& ri = ch == 0 ? ref.slopes_x[m] : ref.slopes_y[m];
                    for (Index y = 0; y < n; ++y)
                        for (Index x = 0; x < n; ++x) {
                            const Index ys = y - dy, xs = x - dx;
                            if (ys < 0 || ys >= n || xs < 0 || xs >= n) continue;
                            const Real w = wv(y, x) * ww(ys, xs);
                            num(dy + R, dx + R) += w * mi(y, x) * ri(ys, xs);
                            den(dy + R, dx + R) += w * ri(ys, xs) * ri(ys, xs);
                        }
                }
    return num / den.max(1e-300);
}

// Small synthetic IM with smooth random modes, full masks.
ModalIM toy_im(Index n, Index n_modes, std::uint64_t seed, Real spatial_scale = 2.0) {
    ModalIM im;
    im.n_side = n;
    im.sub_pitch_delta = 1.0;
    im.wfs_mask = Mask2D::Constant(n, n, true);
    im.valid = Mask2D::Constant(n, n, true);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Real> uni(0.0, 2.0 * 3.14159265358979);
    for (Index m = 0; m < n_modes; ++m) {
        const Real px = uni(rng), py = uni(rng), ax = uni(rng) / spatial_scale,
                   ay = uni(rng) / spatial_scale;
        Map2D sx(n, n), sy(n, n);
        for (Index iy = 0; iy < n; ++iy)
            for (Index ix = 0; ix < n; ++ix) {
                sx(iy, ix) = std::sin(ax * ix + px) * std::cos(ay * iy);
                sy(iy, ix) = std::cos(ax * ix) * std::sin(ay * iy + py);
            }
        im.slopes_x.push_back(sx);
        im.slopes_y.push_back(sy);
    }
    return im;
}

struct ImPair {
    ModalBasis basis;
    Projector proj;
    SubapertureGrid sub;
    ModalIM reference;
};

ImPair reference_system(Index n_sub, Index n_modes) {
    const SimulationPreset preset =
        make_square_preset(n_sub, n_modes, 1.0, 500.0, 0.5, 0.01);
    ImPair p;
    p.sub = preset.sub;
    p.basis = build_kl_basis(preset.grid, n_modes);
    p.proj = phase_projector(preset.grid, preset.sub);
    p.reference = build_modal_im(p.basis, p.proj, p.sub, {}, 0.0, n_modes);
    return p;
}

Real slope_rms(const ModalIM& im) {
    Real ss = 0.0;
    Index count = 0;
    for (Index m = 0; m < im.n_modes(); ++m) {
        ss += im.slopes_x[m].square().sum() + im.slopes_y[m].square().sum();
        count += 2 * (im.valid && im.wfs_mask).count();
    }
    return std::sqrt(ss / static_cast<Real>(count));
}

}  // namespace

TEST_CASE("correlation map equals the direct-sum oracle (8x8, 3 modes)") {
    const ModalIM ref = toy_im(8, 3, 7);
    ModalIM meas = toy_im(8, 3, 7);
    std::mt19937_64 rng(123);
    std::normal_distribution<Real> gauss(0.0, 0.1);
    for (Index m = 0; m < 3; ++m)
        for (Index iy = 0; iy < 8; ++iy)
            for (Index ix = 0; ix < 8; ++ix) {
                meas.slopes_x[m](iy, ix) += gauss(rng);
                meas.slopes_y[m](iy, ix) += gauss(rng);
            }

    const Index R = 2;
    const CorrMap map = correlation_map(meas, ref, R, 1);
    const Map2D oracle = direct_alpha(meas, ref, R);
    for (Index iy = 0; iy < 2 * R + 1; ++iy)
        for (Index ix = 0; ix < 2 * R + 1; ++ix)
            CHECK(map.values(iy, ix) == doctest::Approx(oracle(iy, ix)).epsilon(1e-10));
}

TEST_CASE("correlation map with partial masks equals the oracle") {
    ModalIM ref = toy_im(10, 2, 21);
    ModalIM meas = toy_im(10, 2, 21);
    for (Index iy = 0; iy < 10; ++iy)
        for (Index ix = 0; ix < 10; ++ix) {
            const Real r = std::hypot(iy - 4.5, ix - 4.5);
            ref.wfs_mask(iy, ix) = r <= 5.0;
            meas.wfs_mask(iy, ix) = r <= 5.0;
            meas.valid(iy, ix) = r <= 4.5;
        }
    for (Index m = 0; m < 2; ++m) {
        ref.slopes_x[m] *= (ref.wfs_mask && ref.valid).cast<Real>();
        ref.slopes_y[m] *= (ref.wfs_mask && ref.valid).cast<Real>();
        meas.slopes_x[m] *= (meas.wfs_mask && meas.valid).cast<Real>();
        meas.slopes_y[m] *= (meas.wfs_mask && meas.valid).cast<Real>();
    }
    const CorrMap map = correlation_map(meas, ref, 3, 1);
    const Map2D oracle = direct_alpha(meas, ref, 3);
    for (Index iy = 0; iy < 7; ++iy)
        for (Index ix = 0; ix < 7; ++ix) {
            if (map.values(iy, ix) == 0.0) continue;  // clamped cell
            CHECK(map.values(iy, ix) == doctest::Approx(oracle(iy, ix)).epsilon(1e-10));
        }
}

TEST_CASE("identical IMs peak at zero with value one") {
    const ImPair sys = reference_system(12, 15);
    const CorrMap map = correlation_map(sys.reference, sys.reference, 3, 1);
    CHECK(map.peak.dx == 0.0);
    CHECK(map.peak.dy == 0.0);
    CHECK(map.peak_value == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_FALSE(map.boundary_warning);
}

TEST_CASE("integer shifts are recovered exactly") {
    const ImPair sys = reference_system(16, 20);
    for (const Misreg s : {Misreg{2.0, -1.0}, Misreg{-3.0, 0.0}, Misreg{1.0, 3.0}}) {
        const ModalIM meas = build_modal_im(sys.basis, sys.proj, sys.sub, s, 0.0, 20);
        const Misreg est = estimate_shift(correlation_map(meas, sys.reference, 4, 1));
        CHECK(est.dx == s.dx);
        CHECK(est.dy == s.dy);
    }
}

TEST_CASE("swapping measured and reference negates the estimate") {
    const ImPair sys = reference_system(16, 20);
    const ModalIM meas = build_modal_im(sys.basis, sys.proj, sys.sub, {2.0, 1.0}, 0.0, 20);
    const Misreg fwd = estimate_shift(correlation_map(meas, sys.reference, 4, 1));
    const Misreg bwd = estimate_shift(correlation_map(sys.reference, meas, 4, 1));
    CHECK(fwd.dx == -bwd.dx);
    CHECK(fwd.dy == -bwd.dy);
}

TEST_CASE("fractional shift with super-resolution and noise") {
    const ImPair sys = reference_system(20, 35);
    const Real noise = slope_rms(sys.reference) / 5.0;  // per-slope S/N = 5
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModalIM meas =
            build_modal_im(sys.basis, sys.proj, sys.sub, {0.6, 0.0}, noise, 35, seed);
        const Misreg est = estimate_shift(correlation_map(meas, sys.reference, 5, 8));
        CHECK(std::hypot(est.dx - 0.6, est.dy) <= 0.125);
    }
}

TEST_CASE("peak outside the search radius lands on the boundary with a warning") {
    const ImPair sys = reference_system(16, 15);
    const ModalIM meas = build_modal_im(sys.basis, sys.proj, sys.sub, {3.0, 3.0}, 0.0, 15);
    const CorrMap map = correlation_map(meas, sys.reference, 2, 1);
    CHECK(map.boundary_warning);
    CHECK(std::abs(map.peak.dx) == 2.0);
    CHECK(std::abs(map.peak.dy) == 2.0);
}

TEST_CASE("disjoint masks raise a no-overlap error") {
    ModalIM ref = toy_im(8, 1, 2);
    ModalIM meas = toy_im(8, 1, 2);
    for (Index iy = 0; iy < 8; ++iy)
        for (Index ix = 0; ix < 8; ++ix) {
            meas.valid(iy, ix) = ix < 2;
            ref.wfs_mask(iy, ix) = ix >= 7;
        }
    CHECK_THROWS_AS(correlation_map(meas, ref, 2, 1), NoOverlapError);
}

TEST_CASE("noise robustness: S/N = 1 with 35 modes") {
    const ImPair sys = reference_system(20, 35);
    const Real noise = slope_rms(sys.reference);  // S/N = 1
    Index ok = 0;
    const Index trials = 100;
    for (std::uint64_t seed = 0; seed < trials; ++seed) {
        const ModalIM meas =
            build_modal_im(sys.basis, sys.proj, sys.sub, {0.6, 0.0}, noise, 35, 500 + seed);
        const Misreg est = estimate_shift(correlation_map(meas, sys.reference, 5, 4));
        if (std::hypot(est.dx - 0.6, est.dy) <= 0.25) ++ok;
    }
    CHECK(ok >= 95);
}

TEST_CASE("estimator variance does not grow with more modes") {
    const ImPair sys = reference_system(16, 35);
    const Real noise = slope_rms(sys.reference) * 0.8;
    const auto variance_with = [&](Index n_modes) {
        std::vector<Real> dx;
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            ModalIM meas =
                build_modal_im(sys.basis, sys.proj, sys.sub, {0.4, 0.2}, noise, 35, 900 + seed);
            meas.slopes_x.resize(n_modes);
            meas.slopes_y.resize(n_modes);
            ModalIM ref = sys.reference;
            ref.slopes_x.resize(n_modes);
            ref.slopes_y.resize(n_modes);
            const Misreg est = estimate_shift(correlation_map(meas, ref, 4, 4));
            dx.push_back(est.dx);
        }
        Real mean = 0.0, var = 0.0;
        for (Real v : dx) mean += v;
        mean /= static_cast<Real>(dx.size());
        for (Real v : dx) var += (v - mean) * (v - mean);
        return var / static_cast<Real>(dx.size() - 1);
    };
    CHECK(variance_with(35) <= variance_with(10) * 1.25);
}

TEST_CASE("correlate_fft: delta functions give a single spike") {
    Map2D a = Map2D::Zero(6, 6), b = Map2D::Zero(6, 6);
    a(3, 4) = 1.0;
    b(1, 2) = 1.0;
    const Map2D surf = correlate_fft({a}, {b});
    Index iy = 0, ix = 0;
    CHECK(surf.maxCoeff(&iy, &ix) == doctest::Approx(1.0));
    // a(x) = b(x - d) with d = (2, 2)
    CHECK(ix - 5 == 2);
    CHECK(iy - 5 == 2);
    CHECK(surf.sum() == doctest::Approx(1.0));
}

TEST_CASE("correlate_fft matches the direct sum on random stacks") {
    std::mt19937_64 rng(5);
    std::normal_distribution<Real> gauss;
    std::vector<Map2D> a, b;
    for (int m = 0; m < 3; ++m) {
        Map2D am(8, 8), bm(8, 8);
        for (Index i = 0; i < 8; ++i)
            for (Index j = 0; j < 8; ++j) {
                am(i, j) = gauss(rng);
                bm(i, j) = gauss(rng);
            }
        a.push_back(am);
        b.push_back(bm);
    }
    const Map2D surf = correlate_fft(a, b);
    for (Index dy = -7; dy <= 7; ++dy)
        for (Index dx = -7; dx <= 7; ++dx) {
            Real direct = 0.0;
            for (std::size_t m = 0; m < a.size(); ++m)
                for (Index y = 0; y < 8; ++y)
                    for (Index x = 0; x < 8; ++x) {
                        const Index ys = y - dy, xs = x - dx;
                        if (ys < 0 || ys >= 8 || xs < 0 || xs >= 8) continue;
                        direct += a[m](y, x) * b[m](ys, xs);
                    }
            CHECK(surf(dy + 7, dx + 7) == doctest::Approx(direct).epsilon(1e-10));
        }
}

TEST_CASE("correlate_fft: zero input gives a zero surface") {
    const Map2D z = Map2D::Zero(5, 5);
    CHECK((correlate_fft({z}, {z}).abs() < 1e-14).all());
}
