#include "misreg/alignment.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>

namespace misreg {

namespace {

constexpr Real kPi = std::numbers::pi;

Eigen::Matrix2d rot2(Real deg) {
    const Real a = deg * kPi / 180.0;
    Eigen::Matrix2d r;
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return r;
}

// Closed-form inner solve of the Eq.-style transform fit at fixed alpha:
// minimize sum |e_i - a u_i - b|^2 over scalar a and 2-vector b,
// u_i = R(alpha) t_i. Returns the SSR.
Real transform_ssr(const std::vector<std::pair<Misreg, Misreg>>& pairs, Real alpha_deg,
                   Real& a_out, Eigen::Vector2d& b_out) {
    const Eigen::Matrix2d r = rot2(alpha_deg);
    const Real n = static_cast<Real>(pairs.size());
    Real suu = 0.0, sue = 0.0;
    Eigen::Vector2d su = Eigen::Vector2d::Zero(), se = Eigen::Vector2d::Zero();
    for (const auto& [t, e] : pairs) {
        const Eigen::Vector2d u = r * Eigen::Vector2d(t.dx, t.dy);
        const Eigen::Vector2d ev(e.dx, e.dy);
        suu += u.squaredNorm();
        sue += u.dot(ev);
        su += u;
        se += ev;
    }
    Eigen::Matrix3d m;
    m << suu, su.x(), su.y(), su.x(), n, 0.0, su.y(), 0.0, n;
    const Eigen::Vector3d rhs(sue, se.x(), se.y());
    const Eigen::Vector3d sol = m.ldlt().solve(rhs);
    a_out = sol(0);
    b_out = {sol(1), sol(2)};

    Real ssr = 0.0;
    for (const auto& [t, e] : pairs) {
        const Eigen::Vector2d u = r * Eigen::Vector2d(t.dx, t.dy);
        ssr += (Eigen::Vector2d(e.dx, e.dy) - a_out * u - b_out).squaredNorm();
    }
    return ssr;
}

Real wrap_deg(Real a) {
    while (a > 180.0) a -= 360.0;
    while (a <= -180.0) a += 360.0;
    return a;
}

}  // namespace

LinearTransformFit fit_linear_transform(
    const std::vector<std::pair<Misreg, Misreg>>& pairs) {
    if (pairs.size() < 3)
        throw DegenerateFitError("fit_linear_transform: need at least 3 shift pairs");

    // Collinearity of the theoretical shifts makes the rotation unobservable.
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& [t, e] : pairs) mean += Eigen::Vector2d(t.dx, t.dy);
    mean /= static_cast<Real>(pairs.size());
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
    for (const auto& [t, e] : pairs) {
        const Eigen::Vector2d d = Eigen::Vector2d(t.dx, t.dy) - mean;
        scatter += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
    if (eig.eigenvalues()(0) < 1e-12 * std::max(eig.eigenvalues()(1), Real(1e-300)))
        throw DegenerateFitError("fit_linear_transform: theoretical shifts are collinear");

    Real a;
    Eigen::Vector2d b;

    // Coarse scan, then golden-section refinement of the best bracket.
    Real best_alpha = 0.0, best_ssr = std::numeric_limits<Real>::infinity();
    for (Real alpha = -179.0; alpha <= 180.0; alpha += 1.0) {
        const Real ssr = transform_ssr(pairs, alpha, a, b);
        if (ssr < best_ssr) {
            best_ssr = ssr;
            best_alpha = alpha;
        }
    }
    const Real golden = (std::sqrt(5.0) - 1.0) / 2.0;
    Real lo = best_alpha - 1.5, hi = best_alpha + 1.5;
    Real x1 = hi - golden * (hi - lo), x2 = lo + golden * (hi - lo);
    Real f1 = transform_ssr(pairs, x1, a, b), f2 = transform_ssr(pairs, x2, a, b);
    while (hi - lo > 1e-9) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = transform_ssr(pairs, x1, a, b);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = transform_ssr(pairs, x2, a, b);
        }
    }

    LinearTransformFit fit;
    fit.alpha_deg = wrap_deg(0.5 * (lo + hi));
    const Real ssr = transform_ssr(pairs, fit.alpha_deg, a, b);
    if (a < 0.0) {
        // R(alpha + 180) = -R(alpha): same model with positive sensitivity;
        // b is unchanged by the reparametrization.
        a = -a;
        fit.alpha_deg = wrap_deg(fit.alpha_deg + 180.0);
    }
    if (std::abs(a) < 1e-12)
        throw DegenerateFitError("fit_linear_transform: vanishing sensitivity");
    fit.rho = a;
    fit.delta0 = {b.x() / a, b.y() / a};
    fit.residual_rms = std::sqrt(ssr / static_cast<Real>(pairs.size()));
    return fit;
}

ShiftEstimate estimate_closed_loop(const LoopSystem& sys, const Telemetry& tel,
                                   Index segment_len, Real overlap, Real f_min) {
    const SpectralSeries series = decompose(tel, sys.proj_low, segment_len, overlap);
    SpectralCorr corr = empirical_corr(series);
    corr.k_ctrl = control_space(tel.params, sys.sub.pupil_diameter, corr.k_grid);
    const VectorXd r0 = rho0_curve(corr.f, tel.params);
    return fit_shift(corr, r0, sys.sub.sub_pitch_delta, f_min);
}

ConvergenceTrace run_corrective_loop(const SimulationPreset& preset, EstimatorKind kind,
                                     Misreg initial_misreg, Real gain, Index max_iter,
                                     Real tol_delta, std::uint64_t seed,
                                     const CorrectiveOptions& opt) {
    if (gain <= 0.0 || gain > 1.0) throw InputError("run_corrective_loop: gain must be in (0, 1]");
    if (tol_delta <= 0.0) throw InputError("run_corrective_loop: tol_delta must be > 0");

    const LoopSystem sys = build_loop_system(preset.grid, preset.sub, preset.n_basis_modes,
                                             preset.loop.n_mod);
    std::optional<FrozenFlowScreen> screen;
    if (opt.use_turbulence && preset.turbulence)
        screen = make_screen_for(preset, detail::mix_seed(seed, 77));

    ModalIM reference;
    Projector proj_phase;
    if (kind == EstimatorKind::open2d) {
        proj_phase = phase_projector(preset.grid, preset.sub);
        reference = build_modal_im(sys.basis, proj_phase, preset.sub, {}, 0.0,
                                   std::min(preset.im_modes, sys.basis.n_modes()));
    }

    ConvergenceTrace trace;
    trace.gain = gain;
    trace.criterion = tol_delta;
    Misreg applied;
    Index below = 0;
    for (Index it = 0; it < max_iter; ++it) {
        const Misreg truth = initial_misreg - applied;
        Misreg est;
        if (kind == EstimatorKind::open2d) {
            const ModalIM measured =
                build_modal_im(sys.basis, proj_phase, preset.sub, truth, preset.im_noise_sigma,
                               reference.n_modes(), detail::mix_seed(seed, 1000 + it));
            const Index radius =
                opt.search_radius > 0 ? opt.search_radius : std::max<Index>(1, preset.sub.n_side / 4);
            est = correlation_map(measured, reference, radius, opt.upsample).peak;
        } else {
            const Telemetry tel =
                run_loop(sys, preset.loop, truth, preset.noise_sigma,
                         screen ? &*screen : nullptr, opt.frames, detail::mix_seed(seed, 2000 + it));
            est = estimate_closed_loop(sys, tel, opt.segment_len, opt.overlap, opt.f_min).delta;
        }
        applied = applied + est * gain;
        trace.steps.push_back({est, applied, initial_misreg - applied});
        below = est.norm() < tol_delta ? below + 1 : 0;
        if (below >= opt.consecutive) {
            trace.converged = true;
            break;
        }
    }
    return trace;
}

SweepReport run_shift_sweep(const SimulationPreset& preset, const SweepBackend& backend,
                            const std::vector<Misreg>& shifts, const SweepOptions& opt,
                            std::uint64_t seed) {
    if (shifts.empty()) throw InputError("run_shift_sweep: no shifts given");
    if (opt.n_batches < 2) throw InputError("run_shift_sweep: need at least 2 batches");

    std::optional<LoopSystem> sys;
    std::optional<ModalIM> reference;
    std::optional<Projector> proj_phase;
    std::optional<FrozenFlowScreen> screen;
    if (std::holds_alternative<EstimatorKind>(backend)) {
        sys = build_loop_system(preset.grid, preset.sub, preset.n_basis_modes, preset.loop.n_mod);
        if (std::get<EstimatorKind>(backend) == EstimatorKind::open2d) {
            proj_phase = phase_projector(preset.grid, preset.sub);
            reference = build_modal_im(sys->basis, *proj_phase, preset.sub, {}, 0.0,
                                       std::min(preset.im_modes, sys->basis.n_modes()));
        } else if (opt.use_turbulence && preset.turbulence) {
            screen = make_screen_for(preset, detail::mix_seed(seed, 78));
        }
    }

    SweepReport report;
    for (std::size_t si = 0; si < shifts.size(); ++si) {
        const Misreg shift = shifts[si];
        SweepPoint point;
        point.injected = shift;
        std::vector<Misreg> batch_est;

        if (const auto* synth = std::get_if<SyntheticBackend>(&backend)) {
            std::mt19937_64 rng(detail::mix_seed(seed, 10 + si));
            std::normal_distribution<Real> gauss(0.0, synth->batch_sigma);
            const Eigen::Matrix2d r = rot2(synth->rotation_deg);
            const Eigen::Vector2d base =
                synth->sensitivity *
                (Eigen::Vector2d(synth->bias.dx, synth->bias.dy) + r * Eigen::Vector2d(shift.dx, shift.dy));
            for (Index b = 0; b < opt.n_batches; ++b)
                batch_est.push_back({base.x() + gauss(rng), base.y() + gauss(rng)});
        } else if (std::get<EstimatorKind>(backend) == EstimatorKind::open2d) {
            const Index radius = std::max<Index>(1, preset.sub.n_side / 4);
            for (Index b = 0; b < opt.n_batches; ++b) {
                const ModalIM measured = build_modal_im(
                    sys->basis, *proj_phase, preset.sub, shift, preset.im_noise_sigma,
                    reference->n_modes(), detail::mix_seed(seed, 100 * (si + 1) + b));
                batch_est.push_back(correlation_map(measured, *reference, radius, 8).peak);
            }
        } else {
            const Index total = opt.batch_len + opt.stride * (opt.n_batches - 1);
            try {
                const Telemetry tel =
                    run_loop(*sys, preset.loop, shift, preset.noise_sigma,
                             screen ? &*screen : nullptr, total, detail::mix_seed(seed, 3000 + si));
                for (Index b = 0; b < opt.n_batches; ++b) {
                    Telemetry batch;
                    batch.commands = tel.commands.middleRows(b * opt.stride, opt.batch_len);
                    batch.params = tel.params;
                    batch.frame_rate = tel.frame_rate;
                    batch.injected = tel.injected;
                    batch_est.push_back(
                        estimate_closed_loop(*sys, batch, opt.segment_len, opt.overlap).delta);
                }
            } catch (const InstabilityError&) {
                point.unstable = true;
            }
        }

        point.n_batches = static_cast<Index>(batch_est.size());
        if (!batch_est.empty()) {
            Eigen::Vector2d mean = Eigen::Vector2d::Zero();
            for (const Misreg& e : batch_est) mean += Eigen::Vector2d(e.dx, e.dy);
            mean /= static_cast<Real>(batch_est.size());
            point.mean_estimate = {mean.x(), mean.y()};
            Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
            for (const Misreg& e : batch_est) {
                const Eigen::Vector2d d = Eigen::Vector2d(e.dx, e.dy) - mean;
                cov += d * d.transpose();
            }
            point.covariance = cov / static_cast<Real>(std::max<Index>(1, point.n_batches - 1));
        }
        report.points.push_back(point);
    }

    std::vector<std::pair<Misreg, Misreg>> pairs;
    for (const SweepPoint& p : report.points)
        if (!p.unstable) pairs.emplace_back(p.injected, p.mean_estimate);
    if (pairs.size() >= 3) {
        try {
            report.fit = fit_linear_transform(pairs);
        } catch (const DegenerateFitError&) {
            // sweep along a single axis: report the points without a transform fit
        }
    }
    return report;
}

}  // namespace misreg
