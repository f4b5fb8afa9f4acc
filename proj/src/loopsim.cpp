#include "misreg/loopsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "misreg/fft.hpp"

namespace misreg {

namespace {

constexpr Real kTwoPi = 2.0 * std::numbers::pi;

Complex integrate_tf(Real f, Real tau) {
    if (f == 0.0) return {1.0, 0.0};
    const Complex w(0.0, kTwoPi * tau * f);
    return (1.0 - std::exp(-w)) / w;
}

}  // namespace

Complex wfs_tf(Real f, const LoopParams& p) { return integrate_tf(f, p.tau_wfs); }

Complex dm_tf(Real f, const LoopParams& p) { return integrate_tf(f, p.tau_dm); }

Complex controller_tf(Real f, const LoopParams& p) {
    const Complex num = p.g_int * std::exp(Complex(0.0, -kTwoPi * p.tau_lat * f));
    const Complex den = 1.0 - (1.0 - p.g_leak) * std::exp(Complex(0.0, -kTwoPi * p.tau_rtc * f));
    return num / den;
}

Complex open_loop_tf(Real f, const LoopParams& p) {
    return dm_tf(f, p) * controller_tf(f, p) * wfs_tf(f, p);
}

Real rho0(Real f, const LoopParams& p) {
    if (f <= 0.0) throw InputError("rho0: defined for f > 0 only");
    const Complex mu_c = std::conj(open_loop_tf(f, p));
    if (std::abs(1.0 + mu_c) < 1e-12)
        throw Error("rho0: loop gain too high, 1 + mu vanishes (near instability)");
    return 2.0 * std::imag(mu_c / (1.0 + mu_c));
}

VectorXd rho0_curve(const VectorXd& f, const LoopParams& p) {
    VectorXd out(f.size());
    for (Index i = 0; i < f.size(); ++i) out(i) = rho0(f(i), p);
    return out;
}

Raster FrozenFlowScreen::frame(Real t) const {
    ArrayXXcd spec = spectrum;
    const Real sx = wind.x() * t / pixel;  // shift in pixels
    const Real sy = wind.y() * t / pixel;
    for (Index i = 0; i < n; ++i) {
        const Real fy = static_cast<Real>(fftutil::freq_index(i, n)) / static_cast<Real>(n);
        for (Index j = 0; j < n; ++j) {
            const Real fx = static_cast<Real>(fftutil::freq_index(j, n)) / static_cast<Real>(n);
            const Real phase = -kTwoPi * (fx * sx + fy * sy);
            spec(i, j) *= Complex(std::cos(phase), std::sin(phase));
        }
    }
    Raster r;
    r.extent = extent();
    r.values = fftutil::fft2(spec, true).real();
    return r;
}

FrozenFlowScreen make_frozen_flow(Real r0, Real outer_scale, Vector2d wind, Index n_px,
                                  Real pixel, std::uint64_t seed) {
    if (r0 <= 0 || outer_scale <= 0) throw InputError("make_frozen_flow: r0 and L0 must be > 0");
    if (n_px < 2) throw InputError("make_frozen_flow: screen too small");

    FrozenFlowScreen s;
    s.r0 = r0;
    s.outer_scale = outer_scale;
    s.wind = wind;
    s.n = n_px;
    s.pixel = pixel;

    // von Karman spectrum, k in cycles/m:
    // Phi(k) = 0.0229 r0^{-5/3} (k^2 + 1/L0^2)^{-11/6}  [rad^2 m^2]
    const Real dk = 1.0 / (static_cast<Real>(n_px) * pixel);
    const Real l0inv2 = 1.0 / (outer_scale * outer_scale);
    const Real amp0 = 0.0229 * std::pow(r0, -5.0 / 3.0);

    std::mt19937_64 rng(detail::mix_seed(seed, 0));
    std::normal_distribution<Real> gauss(0.0, 1.0);

    // Gradient-weighted power of the DC cell that a periodic synthesis cannot
    // carry (its mean is zeroed); folded into the four lowest bins weighted by
    // k^2 so the small-separation structure function keeps its Kolmogorov
    // level while the screen stays exactly periodic (frozen flow remains a
    // pure translation).
    Real missing_k2 = 0.0;
    {
        const Index nq = 128;
        for (Index a = 0; a < nq; ++a)
            for (Index b = 0; b < nq; ++b) {
                const Real ky = ((static_cast<Real>(a) + 0.5) / static_cast<Real>(nq) - 0.5) * dk;
                const Real kx = ((static_cast<Real>(b) + 0.5) / static_cast<Real>(nq) - 0.5) * dk;
                const Real k2 = kx * kx + ky * ky;
                missing_k2 += amp0 * std::pow(k2 + l0inv2, -11.0 / 6.0) * k2 *
                              (dk / static_cast<Real>(nq)) * (dk / static_cast<Real>(nq));
            }
    }
    const Real boost_var = missing_k2 / (4.0 * dk * dk);  // per axis bin

    // Cell-averaged PSD for the steep low-frequency rings (a midpoint sample
    // of k^{-11/3} underestimates the first cells by more than 2x).
    const auto cell_var = [&](Index fi, Index fj) {
        const Index ring = std::max(std::abs(fi), std::abs(fj));
        const Index ss = ring <= 3 ? 16 : (ring <= 8 ? 4 : 1);
        Real acc = 0.0;
        for (Index a = 0; a < ss; ++a)
            for (Index b = 0; b < ss; ++b) {
                const Real ky = (static_cast<Real>(fi) +
                                 (static_cast<Real>(a) + 0.5) / static_cast<Real>(ss) - 0.5) * dk;
                const Real kx = (static_cast<Real>(fj) +
                                 (static_cast<Real>(b) + 0.5) / static_cast<Real>(ss) - 0.5) * dk;
                acc += amp0 * std::pow(kx * kx + ky * ky + l0inv2, -11.0 / 6.0);
            }
        return acc / static_cast<Real>(ss * ss) * dk * dk;
    };

    ArrayXXcd coeff(n_px, n_px);
    for (Index i = 0; i < n_px; ++i) {
        const Index fi = fftutil::freq_index(i, n_px);
        for (Index j = 0; j < n_px; ++j) {
            const Index fj = fftutil::freq_index(j, n_px);
            Real var = cell_var(fi, fj);
            const bool axis_bin =
                (std::abs(fj) == 1 && fi == 0) || (std::abs(fi) == 1 && fj == 0);
            if (axis_bin) var += boost_var;
            // Complex amplitude with E|A|^2 = 2 Phi dk^2: the real part of the
            // synthesized field then carries the full variance.
            const Real sigma = std::sqrt(var);
            coeff(i, j) = Complex(gauss(rng) * sigma, gauss(rng) * sigma);
        }
    }
    coeff(0, 0) = 0.0;  // zero mean

    // screen = Re( sum_k A_k e^{2 i pi k x} ) = Re( n^2 ifft2(A) )
    Map2D screen = static_cast<Real>(n_px) * static_cast<Real>(n_px) *
                   fftutil::fft2(coeff, true).real();
    screen -= screen.mean();
    s.rms = std::sqrt(screen.square().mean());
    s.spectrum = fftutil::fft2(screen.cast<Complex>());
    return s;
}

LoopSystem build_loop_system(const ActuatorGrid& grid, const SubapertureGrid& sub,
                             Index n_basis_modes, Index n_mod, Misreg reference_shift) {
    if (n_mod > n_basis_modes)
        throw InputError("build_loop_system: n_mod exceeds the basis size");

    LoopSystem sys;
    sys.grid = grid;
    sys.sub = sub;
    sys.basis = build_kl_basis(grid, n_basis_modes);
    sys.proj_low = build_projector(grid, 1.5);
    sys.proj_phase = phase_projector(grid, sub);

    const ModalIM ref = build_modal_im(sys.basis, sys.proj_phase, sub, reference_shift, 0.0,
                                       n_mod);
    sys.live = ref.wfs_mask && ref.valid;
    for (Index iy = 0; iy < sub.n_side; ++iy)
        for (Index ix = 0; ix < sub.n_side; ++ix)
            if (sys.live(iy, ix)) sys.live_cells.push_back(iy * sub.n_side + ix);

    const Index n_cells = static_cast<Index>(sys.live_cells.size());
    MatrixXd im(2 * n_cells, n_mod);
    for (Index m = 0; m < n_mod; ++m) {
        Index r = 0;
        for (const Index cell : sys.live_cells) {
            const Index iy = cell / sub.n_side, ix = cell % sub.n_side;
            im(r, m) = ref.slopes_x[m](iy, ix);
            im(n_cells + r, m) = ref.slopes_y[m](iy, ix);
            ++r;
        }
    }
    // Truncated modal pseudo-inverse of the reference IM.
    const MatrixXd recon = im.completeOrthogonalDecomposition().pseudoInverse();
    sys.cmd_matrix = sys.basis.modes.topRows(n_mod).transpose() * recon;
    return sys;
}

Telemetry run_loop(const LoopSystem& sys, const LoopParams& p, Misreg misreg,
                   Real noise_sigma, const FrozenFlowScreen* screen, Index T,
                   std::uint64_t seed) {
    if (T < 2) throw InputError("run_loop: need at least 2 frames");

    const Index n_sub = sys.sub.n_side;
    const Index n_cells = static_cast<Index>(sys.live_cells.size());
    const Index n_meas = 2 * n_cells;
    const Index n_act = sys.grid.n_act();

    // Measurement operator at the injected misregistration, restricted to the
    // reference measurement cells.
    const SlopeOperator op = build_slope_operator(sys.sub, sys.proj_phase.raster_n,
                                                  sys.proj_phase.extent, misreg);
    Eigen::SparseMatrix<Real, Eigen::RowMajor> sx(op.sx), sy(op.sy);
    Eigen::SparseMatrix<Real, Eigen::RowMajor> sel(n_meas, op.sx.cols());
    {
        std::vector<Eigen::Triplet<Real>> trips;
        for (Index r = 0; r < n_cells; ++r) {
            for (Eigen::SparseMatrix<Real, Eigen::RowMajor>::InnerIterator it(sx, sys.live_cells[r]); it; ++it)
                trips.emplace_back(r, it.col(), it.value());
            for (Eigen::SparseMatrix<Real, Eigen::RowMajor>::InnerIterator it(sy, sys.live_cells[r]); it; ++it)
                trips.emplace_back(n_cells + r, it.col(), it.value());
        }
        sel.setFromTriplets(trips.begin(), trips.end());
    }
    const MatrixXd meas_from_cmd = MatrixXd(sel * sys.proj_phase.weights);

    // Turbulence raster window (centered block of the periodic screen).
    Index off = 0;
    if (screen) {
        if (std::abs(screen->pixel - sys.proj_phase.pixel()) > 1e-9 * sys.proj_phase.pixel())
            throw InputError("run_loop: screen pixel size must match the phase raster");
        if (screen->n < sys.proj_phase.raster_n)
            throw InputError("run_loop: screen smaller than the phase raster");
        if (screen->extent() < 2.0 * sys.sub.pupil_diameter * (1.0 - 1e-9))
            throw InputError("run_loop: screen must cover at least twice the pupil");
        off = (screen->n - sys.proj_phase.raster_n) / 2;
    }

    std::mt19937_64 rng(detail::mix_seed(seed, 1));
    std::normal_distribution<Real> gauss(0.0, 1.0);

    Telemetry tel;
    tel.commands.resize(T, n_act);
    tel.params = p;
    tel.frame_rate = p.frame_rate();
    tel.injected = misreg;

    VectorXd c = VectorXd::Zero(n_act);
    VectorXd m_prev = VectorXd::Zero(n_meas);  // measurement of frame i-1
    VectorXd meas(n_meas), turb_flat(sys.proj_phase.raster_n * sys.proj_phase.raster_n);

    std::vector<Real> early_rms;
    Real rms_ref = -1.0;

    for (Index i = 0; i < T; ++i) {
        tel.commands.row(i) = c.transpose();

        meas.noalias() = -(meas_from_cmd * c);
        if (screen) {
            const Raster turb = screen->frame((static_cast<Real>(i) + 0.5) * p.tau_rtc);
            const Index rn = sys.proj_phase.raster_n;
            for (Index ry = 0; ry < rn; ++ry)
                for (Index rx = 0; rx < rn; ++rx)
                    turb_flat(ry * rn + rx) = turb.values(off + ry, off + rx);
            meas.noalias() += sel * turb_flat;
        }
        if (noise_sigma > 0)
            for (Index k = 0; k < n_meas; ++k) meas(k) += noise_sigma * gauss(rng);

        // Two-frame total delay: command applied at frame i+1 integrates the
        // measurement of frame i-1.
        c = (1.0 - p.g_leak) * c + p.g_int * (sys.cmd_matrix * m_prev);
        m_prev = meas;

        const Real rms = c.norm() / std::sqrt(static_cast<Real>(n_act));
        if (i >= 8 && i <= 16) early_rms.push_back(rms);
        if (i == 16) {
            std::nth_element(early_rms.begin(), early_rms.begin() + early_rms.size() / 2,
                             early_rms.end());
            rms_ref = early_rms[early_rms.size() / 2];
        }
        if (rms_ref > 0 && rms > 1e3 * rms_ref)
            throw InstabilityError("run_loop: command RMS diverged at frame " +
                                       std::to_string(i),
                                   i);
    }
    return tel;
}

CoupledPairRun simulate_coupled_pair(const LoopParams& p, Real theta, Real noise_sigma,
                                     Index T, std::uint64_t seed,
                                     const VectorXd* disturbance) {
    if (disturbance && disturbance->size() < T)
        throw InputError("simulate_coupled_pair: disturbance shorter than T");

    std::mt19937_64 rng(detail::mix_seed(seed, 2));
    std::normal_distribution<Real> gauss(0.0, 1.0);
    const Real ct = std::cos(theta), st = std::sin(theta);

    CoupledPairRun run;
    run.commands.resize(T, 2);
    run.measurements.resize(T, 2);

    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    Eigen::Vector2d m_prev = Eigen::Vector2d::Zero();
    for (Index i = 0; i < T; ++i) {
        run.commands.row(i) = c.transpose();
        Eigen::Vector2d m(-ct * c.x() + st * c.y(), -st * c.x() - ct * c.y());
        if (disturbance) m.x() += (*disturbance)(i);
        if (noise_sigma > 0) {
            m.x() += noise_sigma * gauss(rng);
            m.y() += noise_sigma * gauss(rng);
        }
        run.measurements.row(i) = m.transpose();
        c = (1.0 - p.g_leak) * c + p.g_int * m_prev;
        m_prev = m;
    }
    return run;
}

}  // namespace misreg
