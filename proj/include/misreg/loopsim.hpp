#ifndef MISREG_LOOPSIM_HPP
#define MISREG_LOOPSIM_HPP

#include <cstdint>
#include <optional>

#include "misreg/forward_model.hpp"

namespace misreg {

/// Temporal parameters of the AO loop. By default all characteristic times
/// are equal (one-frame total latency).
struct LoopParams {
    Real tau_wfs = 1e-3;
    Real tau_rtc = 1e-3;
    Real tau_lat = 1e-3;
    Real tau_dm = 1e-3;
    Real g_int = 0.5;
    Real g_leak = 0.0;
    Index n_mod = 0;

    Real frame_rate() const { return 1.0 / tau_rtc; }
    Real nyquist() const { return 0.5 / tau_rtc; }

    static LoopParams from_rate(Real loop_hz, Real g_int, Real g_leak, Index n_mod) {
        const Real tau = 1.0 / loop_hz;
        return {tau, tau, tau, tau, g_int, g_leak, n_mod};
    }
};

/// WFS integration: S(f) = (1 - e^{-2i pi tau_wfs f}) / (2i pi tau_wfs f), S(0) = 1.
Complex wfs_tf(Real f, const LoopParams& p);

/// Leaky integrator with latency:
/// C(f) = g_int e^{-2i pi tau_lat f} / (1 - (1 - g_leak) e^{-2i pi tau_rtc f}).
Complex controller_tf(Real f, const LoopParams& p);

/// DM hold: same family as the WFS integration, with tau_dm.
Complex dm_tf(Real f, const LoopParams& p);

/// Open-loop transfer mu(f) = A C S.
Complex open_loop_tf(Real f, const LoopParams& p);

/// Theoretical small-shift correlation between the symmetric and
/// antisymmetric command channels: rho0(f) = 2 Im(conj(mu) / (1 + conj(mu))).
/// Defined for f > 0 only; throws near the loop instability pole.
Real rho0(Real f, const LoopParams& p);

VectorXd rho0_curve(const VectorXd& f, const LoopParams& p);

/// Periodic von Karman phase screen translating rigidly at the wind velocity.
struct FrozenFlowScreen {
    Real r0 = 0.0;
    Real outer_scale = 0.0;
    Vector2d wind = Vector2d::Zero();
    Real rms = 0.0;
    Index n = 0;
    Real pixel = 0.0;
    ArrayXXcd spectrum;  // 2D DFT of the t = 0 screen

    Real extent() const { return static_cast<Real>(n) * pixel; }

    /// Screen at time t: the t = 0 screen translated by wind * t, subpixel
    /// translation done as a Fourier phase ramp.
    Raster frame(Real t) const;
};

FrozenFlowScreen make_frozen_flow(Real r0, Real outer_scale, Vector2d wind, Index n_px,
                                  Real pixel, std::uint64_t seed);

/// Closed-loop command history.
struct Telemetry {
    MatrixXd commands;  // T x n_act
    LoopParams params;
    Real frame_rate = 0.0;
    Misreg injected;  // ground truth, for tests and reports

    Index frames() const { return commands.rows(); }
    Index n_act() const { return commands.cols(); }
};

/// Precomputed simulation plant: geometry, modal basis, projectors, the
/// command matrix (truncated modal pseudo-inverse of the reference IM) and
/// the measurement-cell selection of the reference geometry.
struct LoopSystem {
    ActuatorGrid grid;
    SubapertureGrid sub;
    ModalBasis basis;
    Projector proj_low;    // command rasters for telemetry analysis
    Projector proj_phase;  // phase-resolution rasters for the WFS model
    MatrixXd cmd_matrix;   // n_act x n_meas
    Mask2D live;           // measurement cells (reference wfs && valid)
    std::vector<Index> live_cells;  // flat (iy * n_side + ix) indices

    Index n_meas() const { return 2 * static_cast<Index>(live_cells.size()); }
};

/// Builds the plant. reference_shift displaces the reference IM used for the
/// command matrix (normally zero; nonzero models a system closed on an
/// already-shifted calibration).
LoopSystem build_loop_system(const ActuatorGrid& grid, const SubapertureGrid& sub,
                             Index n_basis_modes, Index n_mod,
                             Misreg reference_shift = {});

/// Runs the closed loop: per frame the residual (turbulence minus DM) is
/// sensed through the misregistered WFS with additive slope noise, projected
/// on the command matrix, and integrated with a two-frame total delay
/// (measurement of frame i updates the command applied at frame i + 2).
/// Throws InstabilityError when the command RMS diverges.
Telemetry run_loop(const LoopSystem& sys, const LoopParams& p, Misreg misreg,
                   Real noise_sigma, const FrozenFlowScreen* screen, Index T,
                   std::uint64_t seed);

/// Minimal loop for one spatial frequency: the symmetric/antisymmetric
/// coefficient pair coupled by the rotation angle theta, driven by
/// measurement noise and an optional per-frame disturbance on the symmetric
/// channel (already WFS-averaged by the caller).
struct CoupledPairRun {
    MatrixXd commands;      // T x 2
    MatrixXd measurements;  // T x 2
};

CoupledPairRun simulate_coupled_pair(const LoopParams& p, Real theta, Real noise_sigma,
                                     Index T, std::uint64_t seed,
                                     const VectorXd* disturbance = nullptr);

}  // namespace misreg

#endif
