#ifndef MISREG_ALIGNMENT_HPP
#define MISREG_ALIGNMENT_HPP

#include <functional>
#include <variant>
#include <vector>

#include "misreg/cl_estimator.hpp"
#include "misreg/estimator2d.hpp"
#include "misreg/presets.hpp"

namespace misreg {

enum class EstimatorKind { open2d, closed };

/// Full closed-loop estimation pipeline on one telemetry batch: spectral
/// decomposition, empirical correlation, control-space selection and the
/// lateral-shift fit against the analytic rho0 of the telemetry's loop.
ShiftEstimate estimate_closed_loop(const LoopSystem& sys, const Telemetry& tel,
                                   Index segment_len = 256, Real overlap = 0.5,
                                   Real f_min = 0.0);

/// One iteration of the corrective loop: what was estimated, the accumulated
/// correction after the update, and the remaining true misregistration.
struct ConvergenceTrace {
    struct Step {
        Misreg estimate;
        Misreg applied_correction;
        Misreg residual_truth;
    };
    std::vector<Step> steps;
    Real gain = 0.0;
    Real criterion = 0.0;
    bool converged = false;
};

struct CorrectiveOptions {
    Index frames = 2500;       // closed-loop telemetry per iteration
    Index segment_len = 256;   // Welch segment
    Real overlap = 0.5;
    Real f_min = 0.0;          // low-frequency cut for the closed estimator
    Index search_radius = 0;   // open2d; 0 = n_side / 4
    Index upsample = 8;        // open2d
    Index consecutive = 3;     // sub-tolerance estimates required to declare convergence
    bool use_turbulence = true;
};

/// Integrates either estimator against the simulated system until the
/// estimated residual stays below tol_delta. Returns the full trace; a trace
/// with converged = false means max_iter was exhausted.
ConvergenceTrace run_corrective_loop(const SimulationPreset& preset, EstimatorKind kind,
                                     Misreg initial_misreg, Real gain, Index max_iter,
                                     Real tol_delta, std::uint64_t seed,
                                     const CorrectiveOptions& opt = {});

/// Best linear transform delta_est ~ rho (delta0 + R(alpha) delta_th):
/// sensitivity rho, clocking alpha, offset delta0.
struct LinearTransformFit {
    Misreg delta0;
    Real rho = 1.0;
    Real alpha_deg = 0.0;
    Real residual_rms = 0.0;
};

/// Golden-section scan over alpha with a closed-form inner solve for
/// (rho, rho * delta0). Throws DegenerateFitError on collinear inputs.
LinearTransformFit fit_linear_transform(
    const std::vector<std::pair<Misreg, Misreg>>& theoretical_estimated);

/// Synthetic estimator backend for protocol tests: per-batch estimates drawn
/// from a known linear transform plus Gaussian scatter.
struct SyntheticBackend {
    Real sensitivity = 0.5;
    Real rotation_deg = 0.0;
    Misreg bias;
    Real batch_sigma = 0.02;
};

using SweepBackend = std::variant<EstimatorKind, SyntheticBackend>;

struct SweepOptions {
    Index n_batches = 31;
    Index batch_len = 2500;
    Index stride = 250;
    Index segment_len = 256;
    Real overlap = 0.5;
    bool use_turbulence = false;
};

struct SweepPoint {
    Misreg injected;
    Misreg mean_estimate;
    Eigen::Matrix2d covariance;  // over batches, delta^2 units
    Index n_batches = 0;
    bool unstable = false;
};

struct SweepReport {
    std::vector<SweepPoint> points;
    LinearTransformFit fit;  // over the stable points
};

/// Shift-sweep protocol: per injected shift, run the system, estimate per
/// telemetry batch (batch_len frames every stride frames), report the batch
/// mean and covariance; shifts that destabilize the loop are excluded from
/// the final linear-transform fit.
SweepReport run_shift_sweep(const SimulationPreset& preset, const SweepBackend& backend,
                            const std::vector<Misreg>& shifts, const SweepOptions& opt,
                            std::uint64_t seed);

}  // namespace misreg

#endif
