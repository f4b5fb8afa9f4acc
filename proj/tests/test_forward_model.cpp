#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "misreg/forward_model.hpp"
#include "misreg/presets.hpp"

using namespace misreg;

namespace {

Real cosine_similarity(const VectorXd& a, const VectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
}

Raster analytic_raster(Index n, Real extent, const std::function<Real(Real, Real)>& f) {
    Raster r;
    r.extent = extent;
    r.values.resize(n, n);
    for (Index iy = 0; iy < n; ++iy)
        for (Index ix = 0; ix < n; ++ix) {
            const Real x = r.origin() + (static_cast<Real>(ix) + 0.5) * r.pixel();
            const Real y = r.origin() + (static_cast<Real>(iy) + 0.5) * r.pixel();
            r.values(iy, ix) = f(x, y);
        }
    return r;
}

}  // namespace

TEST_CASE("kl basis: leading modes are tip and tilt") {
    const ActuatorGrid grid = build_cartesian_grid(9, 0.25, 2.3);
    const ModalBasis basis = build_kl_basis(grid, 6);

    VectorXd ramp_x = grid.positions.col(0);
    VectorXd ramp_y = grid.positions.col(1);
    ramp_x.array() -= ramp_x.mean();
    ramp_y.array() -= ramp_y.mean();

    // tip/tilt span the first two modes (possibly mixed between them)
    for (const VectorXd& ramp : {ramp_x, ramp_y}) {
        const Real c0 = cosine_similarity(basis.modes.row(0).transpose(), ramp);
        const Real c1 = cosine_similarity(basis.modes.row(1).transpose(), ramp);
        CHECK(std::sqrt(c0 * c0 + c1 * c1) >= 0.99);
    }
}

TEST_CASE("kl basis: orthonormal, piston-free, sorted") {
    const ActuatorGrid grid = build_hex_grid(4, 1.0, false);
    const ModalBasis basis = build_kl_basis(grid, 30);

    const MatrixXd gram = basis.modes * basis.modes.transpose();
    CHECK((gram - MatrixXd::Identity(30, 30)).cwiseAbs().maxCoeff() < 1e-8);
    for (Index m = 0; m < basis.n_modes(); ++m)
        CHECK(std::abs(basis.modes.row(m).mean()) < 1e-10);
    for (Index m = 1; m < basis.n_modes(); ++m)
        CHECK(basis.eigenvalues(m) <= basis.eigenvalues(m - 1) + 1e-12);
}

TEST_CASE("kl basis: piston removal caps the mode count") {
    const ActuatorGrid grid = build_hex_grid(2, 1.0);
    CHECK_THROWS_AS(build_kl_basis(grid, grid.n_act()), InputError);
    CHECK_NOTHROW(build_kl_basis(grid, grid.n_act() - 1));
}

TEST_CASE("kl basis: subset stays orthonormal") {
    const ActuatorGrid grid = build_cartesian_grid(7, 0.3, 2.0);
    const ModalBasis basis = build_kl_basis(grid, 20);
    const MatrixXd sub = basis.modes.middleRows(5, 9);
    CHECK((sub * sub.transpose() - MatrixXd::Identity(9, 9)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("sh slopes: global tilt gives exact uniform slopes") {
    const SubapertureGrid sub = build_subaperture_grid(8, 1.0, 0.0);
    const Raster phase = analytic_raster(80, 1.25, [](Real x, Real) { return 3.0 * x; });

    for (const Misreg shift : {Misreg{0.0, 0.0}, Misreg{0.6, 0.0}, Misreg{-0.35, 0.8}}) {
        const auto [sx, sy] = sh_slopes(phase, sub, shift);
        for (Index iy = 0; iy < 8; ++iy)
            for (Index ix = 0; ix < 8; ++ix) {
                if (!sub.wfs_mask(iy, ix)) {
                    CHECK(sx(iy, ix) == 0.0);
                    continue;
                }
                CHECK(sx(iy, ix) == doctest::Approx(3.0).epsilon(1e-10));
                CHECK(std::abs(sy(iy, ix)) < 1e-10);
            }
    }
}

TEST_CASE("sh slopes: resolution precondition") {
    const SubapertureGrid sub = build_subaperture_grid(8, 1.0, 0.0);
    const Raster coarse = analytic_raster(24, 1.25, [](Real x, Real) { return x; });
    CHECK_THROWS_AS(sh_slopes(coarse, sub, {}), InputError);
}

TEST_CASE("sh slopes: shifted sinusoid matches the analytic window mean") {
    const Index n_sub = 8;
    const SubapertureGrid sub = build_subaperture_grid(n_sub, 1.0, 0.0);
    const Real delta = sub.sub_pitch_delta;
    const Real w = 2.0 * std::numbers::pi / (3.0 * delta);
    // margin beyond the pupil covers the 1.5-cell window displacement
    const Raster phase =
        analytic_raster(160, 1.6, [&](Real x, Real) { return std::sin(w * x); });

    const Misreg shift{1.5, 0.0};
    const auto [sx, sy] = sh_slopes(phase, sub, shift);
    for (Index iy = 0; iy < n_sub; ++iy)
        for (Index ix = 0; ix < n_sub; ++ix) {
            if (!sub.wfs_mask(iy, ix)) continue;
            const Real x0 = -0.5 + (static_cast<Real>(ix) - shift.dx) * delta;
            // exact window mean of the analytic cosine gradient; the model
            // samples the gradient at 8 points per axis, a midpoint quadrature
            // whose residual here is ~0.4%
            const Real expected = (std::sin(w * (x0 + delta)) - std::sin(w * x0)) / delta;
            CHECK(sx(iy, ix) == doctest::Approx(expected).epsilon(6e-3));
            CHECK(std::abs(sy(iy, ix)) < 1e-6);
        }
}

TEST_CASE("sh slopes: tilt slopes are shift invariant") {
    const SimulationPreset preset = make_square_preset(10, 20, 1.0, 500.0, 0.5, 0.01);
    const SubapertureGrid& sub = preset.sub;
    const Raster tilt = analytic_raster(100, 1.3, [](Real x, Real y) { return x - 2.0 * y; });
    const auto [sx0, sy0] = sh_slopes(tilt, sub, {});
    const auto [sx1, sy1] = sh_slopes(tilt, sub, {0.37, -0.6});
    CHECK(((sx0 - sx1) * sub.wfs_mask.cast<Real>()).abs().maxCoeff() < 1e-9);
    CHECK(((sy0 - sy1) * sub.wfs_mask.cast<Real>()).abs().maxCoeff() < 1e-9);
}

TEST_CASE("modal IM: zero-shift zero-noise build equals the reference bit-exactly") {
    const SimulationPreset preset = make_square_preset(10, 20, 1.0, 500.0, 0.5, 0.01);
    const ModalBasis basis = build_kl_basis(preset.grid, 25);
    const Projector proj = phase_projector(preset.grid, preset.sub);

    const ModalIM a = build_modal_im(basis, proj, preset.sub, {}, 0.0, 20, 1);
    const ModalIM b = build_modal_im(basis, proj, preset.sub, {}, 0.0, 20, 99);
    REQUIRE(a.n_modes() == b.n_modes());
    for (Index m = 0; m < a.n_modes(); ++m) {
        CHECK((a.slopes_x[m] == b.slopes_x[m]).all());
        CHECK((a.slopes_y[m] == b.slopes_y[m]).all());
    }
}

TEST_CASE("modal IM: integer shift translates the slope maps") {
    const SimulationPreset preset = make_square_preset(12, 20, 1.2, 500.0, 0.5, 0.01);
    const ModalBasis basis = build_kl_basis(preset.grid, 15);
    const Projector proj = phase_projector(preset.grid, preset.sub);

    const ModalIM ref = build_modal_im(basis, proj, preset.sub, {}, 0.0, 15);
    const ModalIM meas = build_modal_im(basis, proj, preset.sub, {2.0, 0.0}, 0.0, 15);
    const Index n = preset.sub.n_side;
    for (Index m = 0; m < 15; ++m)
        for (Index iy = 0; iy < n; ++iy)
            for (Index ix = 2; ix < n; ++ix) {
                if (!(meas.valid(iy, ix) && meas.wfs_mask(iy, ix)) ||
                    !(ref.valid(iy, ix - 2) && ref.wfs_mask(iy, ix - 2)))
                    continue;
                CHECK(meas.slopes_x[m](iy, ix) ==
                      doctest::Approx(ref.slopes_x[m](iy, ix - 2)).epsilon(1e-10));
                CHECK(meas.slopes_y[m](iy, ix) ==
                      doctest::Approx(ref.slopes_y[m](iy, ix - 2)).epsilon(1e-10));
            }
}

TEST_CASE("modal IM: noise level matches the requested sigma") {
    const SimulationPreset preset = make_square_preset(14, 20, 1.4, 500.0, 0.5, 0.01);
    const ModalBasis basis = build_kl_basis(preset.grid, 40);
    const Projector proj = phase_projector(preset.grid, preset.sub);

    const Real sigma = 0.123;
    const ModalIM clean = build_modal_im(basis, proj, preset.sub, {}, 0.0, 40);
    const ModalIM noisy = build_modal_im(basis, proj, preset.sub, {}, sigma, 40, 2024);

    Real ss = 0.0;
    Index count = 0;
    const Mask2D live = clean.wfs_mask && clean.valid;
    for (Index m = 0; m < 40; ++m)
        for (Index iy = 0; iy < preset.sub.n_side; ++iy)
            for (Index ix = 0; ix < preset.sub.n_side; ++ix)
                if (live(iy, ix)) {
                    const Real dx = noisy.slopes_x[m](iy, ix) - clean.slopes_x[m](iy, ix);
                    const Real dy = noisy.slopes_y[m](iy, ix) - clean.slopes_y[m](iy, ix);
                    ss += dx * dx + dy * dy;
                    count += 2;
                }
    REQUIRE(count >= 10000);
    const Real emp = std::sqrt(ss / static_cast<Real>(count));
    CHECK(emp == doctest::Approx(sigma).epsilon(0.1));
}

TEST_CASE("modal IM: slopes vanish outside valid && wfs") {
    const SimulationPreset preset = make_square_preset(10, 20, 1.0, 500.0, 0.5, 0.01);
    const ModalBasis basis = build_kl_basis(preset.grid, 10);
    const Projector proj = phase_projector(preset.grid, preset.sub);
    const ModalIM im = build_modal_im(basis, proj, preset.sub, {0.6, -0.4}, 0.05, 10, 5);
    const Mask2D dead = !(im.valid && im.wfs_mask);
    for (Index m = 0; m < 10; ++m) {
        CHECK((im.slopes_x[m] * dead.cast<Real>() == 0.0).all());
        CHECK((im.slopes_y[m] * dead.cast<Real>() == 0.0).all());
    }
}

TEST_CASE("modal IM: per-mode seeding is deterministic") {
    const SimulationPreset preset = make_square_preset(10, 20, 1.0, 500.0, 0.5, 0.01);
    const ModalBasis basis = build_kl_basis(preset.grid, 8);
    const Projector proj = phase_projector(preset.grid, preset.sub);
    const ModalIM a = build_modal_im(basis, proj, preset.sub, {0.2, 0.1}, 0.05, 8, 31);
    const ModalIM b = build_modal_im(basis, proj, preset.sub, {0.2, 0.1}, 0.05, 8, 31);
    for (Index m = 0; m < 8; ++m) {
        CHECK((a.slopes_x[m] == b.slopes_x[m]).all());
        CHECK((a.slopes_y[m] == b.slopes_y[m]).all());
    }
}

TEST_CASE("illumination flux translates with the shift") {
    const SubapertureGrid sub = build_subaperture_grid(10, 1.0, 0.1);
    const Map2D f0 = illumination_flux(sub, {});
    const Map2D f2 = illumination_flux(sub, {2.0, 0.0});
    for (Index iy = 0; iy < 10; ++iy)
        for (Index ix = 2; ix < 10; ++ix)
            CHECK(f2(iy, ix) == doctest::Approx(f0(iy, ix - 2)).epsilon(1e-12));
}
