#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "misreg/alignment.hpp"

using namespace misreg;

namespace {

constexpr Real kPi = std::numbers::pi;

Misreg apply_transform(Real rho, Real alpha_deg, Misreg delta0, Misreg t) {
    const Real a = alpha_deg * kPi / 180.0;
    const Real ux = std::cos(a) * t.dx - std::sin(a) * t.dy;
    const Real uy = std::sin(a) * t.dx + std::cos(a) * t.dy;
    return {rho * (delta0.dx + ux), rho * (delta0.dy + uy)};
}

std::vector<Misreg> cross_shifts() {
    std::vector<Misreg> out;
    for (const Real s : {0.15, 0.30, 0.45, 0.60, 0.75, 0.90}) {
        out.push_back({s, 0.0});
        out.push_back({-s, 0.0});
        out.push_back({0.0, s});
        out.push_back({0.0, -s});
    }
    return out;
}

}  // namespace

TEST_CASE("linear transform fit: identity") {
    std::vector<std::pair<Misreg, Misreg>> pairs;
    for (const Misreg t : cross_shifts()) pairs.emplace_back(t, t);
    const LinearTransformFit fit = fit_linear_transform(pairs);
    CHECK(std::abs(fit.rho - 1.0) < 1e-9);
    CHECK(std::abs(fit.alpha_deg) < 1e-7);
    CHECK(std::abs(fit.delta0.dx) < 1e-9);
    CHECK(std::abs(fit.delta0.dy) < 1e-9);
}

TEST_CASE("linear transform fit: paper-like synthetic transform") {
    const Real rho = 0.5, alpha = -20.0;
    const Misreg delta0{0.195, -0.103};
    std::vector<std::pair<Misreg, Misreg>> pairs;
    for (const Misreg t : cross_shifts())
        pairs.emplace_back(t, apply_transform(rho, alpha, delta0, t));
    const LinearTransformFit fit = fit_linear_transform(pairs);
    CHECK(std::abs(fit.rho - rho) < 1e-6);
    CHECK(std::abs(fit.alpha_deg - alpha) < 1e-6);
    CHECK(std::abs(fit.delta0.dx - delta0.dx) < 1e-6);
    CHECK(std::abs(fit.delta0.dy - delta0.dy) < 1e-6);
    CHECK(fit.residual_rms < 1e-9);
}

TEST_CASE("linear transform fit: exact over the full parameter range") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<Real> urho(0.1, 2.0), ualpha(-180.0, 180.0),
        ud(-0.3, 0.3);
    for (int trial = 0; trial < 20; ++trial) {
        const Real rho = urho(rng);
        Real alpha = ualpha(rng);
        if (alpha <= -180.0) alpha = 180.0;
        const Misreg d0{ud(rng), ud(rng)};
        std::vector<std::pair<Misreg, Misreg>> pairs;
        for (const Misreg t : cross_shifts())
            pairs.emplace_back(t, apply_transform(rho, alpha, d0, t));
        const LinearTransformFit fit = fit_linear_transform(pairs);
        CHECK(fit.rho == doctest::Approx(rho).epsilon(1e-6));
        CHECK(std::abs(std::remainder(fit.alpha_deg - alpha, 360.0)) < 1e-5);
        CHECK(std::abs(fit.delta0.dx - d0.dx) < 1e-6);
        CHECK(std::abs(fit.delta0.dy - d0.dy) < 1e-6);
        CHECK(fit.residual_rms < 1e-9);
        CHECK(fit.rho > 0.0);
        CHECK(fit.alpha_deg > -180.0);
        CHECK(fit.alpha_deg <= 180.0);
    }
}

TEST_CASE("linear transform fit: noise scaling over many pairs") {
    const Real rho = 0.8, alpha = 35.0;
    const Misreg d0{0.05, -0.02};
    const Real sigma = 0.02;
    std::mt19937_64 rng(99);
    std::normal_distribution<Real> gauss(0.0, sigma);

    // parameter error should shrink like sigma / sqrt(n_pairs)
    Real err_small = 0.0, err_big = 0.0;
    for (int rep = 0; rep < 8; ++rep) {
        for (const bool big : {false, true}) {
            std::vector<std::pair<Misreg, Misreg>> pairs;
            const int copies = big ? 16 : 1;
            for (int c = 0; c < copies; ++c)
                for (const Misreg t : cross_shifts()) {
                    Misreg e = apply_transform(rho, alpha, d0, t);
                    e.dx += gauss(rng);
                    e.dy += gauss(rng);
                    pairs.emplace_back(t, e);
                }
            const LinearTransformFit fit = fit_linear_transform(pairs);
            (big ? err_big : err_small) += std::abs(fit.rho - rho) / 8.0;
        }
    }
    CHECK(err_big < err_small);  // 16x the data must not be worse
    CHECK(err_small < 5.0 * sigma);
}

TEST_CASE("linear transform fit: degenerate inputs") {
    std::vector<std::pair<Misreg, Misreg>> two = {{{0.1, 0.0}, {0.1, 0.0}},
                                                  {{0.2, 0.0}, {0.2, 0.0}}};
    CHECK_THROWS_AS(fit_linear_transform(two), DegenerateFitError);

    std::vector<std::pair<Misreg, Misreg>> collinear;
    for (const Real s : {0.1, 0.2, 0.3, 0.4}) collinear.push_back({{s, 0.0}, {s, 0.0}});
    CHECK_THROWS_AS(fit_linear_transform(collinear), DegenerateFitError);
}

TEST_CASE("corrective loop: open2d from a large shift converges in a few iterations") {
    SimulationPreset preset = make_square_preset(16, 30, 1.0, 500.0, 0.5, 0.01);
    preset.im_modes = 30;
    preset.im_noise_sigma = 0.0;
    CorrectiveOptions opt;
    opt.use_turbulence = false;
    const ConvergenceTrace trace =
        run_corrective_loop(preset, EstimatorKind::open2d, {3.0, 0.0}, 1.0, 10, 0.125, 1, opt);
    CHECK(trace.converged);
    CHECK(trace.steps.size() <= 5 + opt.consecutive);
    CHECK(trace.steps.back().residual_truth.norm() < 0.125);

    // integrator bookkeeping: applied_{i+1} = applied_i + gain * estimate_i
    Misreg acc;
    for (const auto& step : trace.steps) {
        acc = acc + step.estimate * trace.gain;
        CHECK(std::abs(step.applied_correction.dx - acc.dx) < 1e-12);
        CHECK(std::abs(step.applied_correction.dy - acc.dy) < 1e-12);
    }
}

TEST_CASE("corrective loop: aligned system converges immediately") {
    SimulationPreset preset = make_square_preset(12, 20, 1.0, 500.0, 0.5, 0.01);
    preset.im_noise_sigma = 0.0;
    CorrectiveOptions opt;
    opt.use_turbulence = false;
    const ConvergenceTrace trace =
        run_corrective_loop(preset, EstimatorKind::open2d, {}, 1.0, 10, 0.125, 2, opt);
    CHECK(trace.converged);
    CHECK(trace.steps.size() == static_cast<std::size_t>(opt.consecutive));
    for (const auto& s : trace.steps) CHECK(s.estimate.norm() < 0.05);
}

TEST_CASE("corrective loop: closed estimator, noise only") {
    // a 20x20 system controlling 60 modes keeps the small-shift sensitivity
    // near 0.3, which is what lets gain 0.5 reach 0.05 delta in 20 iterations
    SimulationPreset preset = make_square_preset(20, 60, 1.8, 500.0, 0.5, 0.01);
    preset.noise_sigma = 1.0;
    CorrectiveOptions opt;
    opt.use_turbulence = false;
    opt.frames = 2500;
    opt.segment_len = 256;
    opt.consecutive = 99;  // judge the true residual after the full budget
    const ConvergenceTrace trace =
        run_corrective_loop(preset, EstimatorKind::closed, {0.6, 0.0}, 0.5, 20, 0.005, 3, opt);
    CHECK(trace.steps.back().residual_truth.norm() < 0.05);

    // contraction: the first correction moves the residual well below 0.6
    const Real first = trace.steps.front().residual_truth.norm();
    CHECK(first < 0.55);
}

TEST_CASE("shift sweep: synthetic backend recovers the injected transform") {
    const SimulationPreset preset = make_square_preset(8, 12, 1.0, 500.0, 0.5, 0.01);
    SyntheticBackend backend;
    backend.sensitivity = 0.5;
    backend.rotation_deg = 20.0;
    backend.bias = {0.0, 0.0};
    backend.batch_sigma = 0.02;
    SweepOptions opt;
    opt.n_batches = 31;
    const SweepReport report =
        run_shift_sweep(preset, backend, cross_shifts(), opt, 7);

    REQUIRE(report.points.size() == cross_shifts().size());
    CHECK(std::abs(report.fit.rho - 0.5) < 0.025);
    CHECK(std::abs(report.fit.alpha_deg - 20.0) < 2.0);
    CHECK(report.fit.delta0.norm() < 0.03);

    // linearity of |estimate| vs |injected| after sensitivity scaling
    for (const SweepPoint& pt : report.points) {
        const Real expected = 0.5 * pt.injected.norm();
        CHECK(std::abs(pt.mean_estimate.norm() - expected) < 0.1 * std::max(expected, 0.075));
    }
}

TEST_CASE("shift sweep: zero-shift mean is consistent with zero") {
    const SimulationPreset preset = make_square_preset(8, 12, 1.0, 500.0, 0.5, 0.01);
    SyntheticBackend backend;
    backend.sensitivity = 0.5;
    backend.batch_sigma = 0.05;
    SweepOptions opt;
    opt.n_batches = 31;
    const SweepReport report = run_shift_sweep(preset, backend, {{0.0, 0.0}}, opt, 3);
    const SweepPoint& pt = report.points.front();
    const Real sigma_mean = 0.05 / std::sqrt(31.0);
    CHECK(pt.mean_estimate.norm() < 3.0 * sigma_mean * 2.0);
}

TEST_CASE("shift sweep: reproducible with the same seed") {
    const SimulationPreset preset = make_square_preset(8, 12, 1.0, 500.0, 0.5, 0.01);
    SyntheticBackend backend;
    SweepOptions opt;
    opt.n_batches = 5;
    const std::vector<Misreg> shifts = {{0.3, 0.0}, {0.0, 0.3}, {-0.3, 0.0}, {0.0, -0.3}};
    const SweepReport a = run_shift_sweep(preset, backend, shifts, opt, 11);
    const SweepReport b = run_shift_sweep(preset, backend, shifts, opt, 11);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].mean_estimate.dx == b.points[i].mean_estimate.dx);
        CHECK(a.points[i].mean_estimate.dy == b.points[i].mean_estimate.dy);
        CHECK((a.points[i].covariance.array() == b.points[i].covariance.array()).all());
    }
    CHECK(a.fit.rho == b.fit.rho);
    CHECK(a.fit.alpha_deg == b.fit.alpha_deg);
}
