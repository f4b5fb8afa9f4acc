#ifndef MISREG_CL_ESTIMATOR_HPP
#define MISREG_CL_ESTIMATOR_HPP

#include <mutex>
#include <optional>

#include "misreg/loopsim.hpp"

namespace misreg {

using MaskX = Eigen::Array<bool, Eigen::Dynamic, 1>;
using MaskXX = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Welch-accumulated spectra of the symmetric (cosine, c1) and antisymmetric
/// (sine, c2) spatial-frequency channels of the command rasters.
///
/// k_grid holds one representative per (k, -k) pair: kx > 0, plus kx = 0 with
/// ky > 0. The temporal transform uses the e^{+2 i pi f t} sign convention so
/// that a positive lateral shift produces a positive correlation at f > 0.
/// Per-(k, f) sufficient statistics are accumulated over segments instead of
/// keeping every segment spectrum, which both estimator variants below only
/// need; raw per-segment storage would not scale to kilo-actuator telemetry.
struct SpectralSeries {
    Eigen::Matrix<Real, Eigen::Dynamic, 2> k_grid;  // 1/m
    VectorXd f;                                     // Hz, f > 0
    Index n_segments = 0;
    Real frame_rate = 0.0;

    ArrayXXcd s12;           // n_k x n_f: sum_seg conj(C1) C2
    ArrayXXd p11, p22;       // n_k x n_f: sum_seg |C1|^2, |C2|^2
    ArrayXXd seg_mean_corr;  // n_k x n_f: mean_seg Im(conj(C1) C2 / |C1||C2|)

    Index n_k() const { return k_grid.rows(); }
    Index n_f() const { return f.size(); }
};

/// Empirical imaginary correlation rho_cl(k, f) with its exclusion mask
/// (zero-power cells) and the control-space membership of each k.
struct SpectralCorr {
    Eigen::Matrix<Real, Eigen::Dynamic, 2> k_grid;
    VectorXd f;
    ArrayXXd rho;      // n_k x n_f, in [-1, 1]
    MaskXX excluded;   // zero-power cells, skipped in every sum
    MaskX k_ctrl;      // K^ctrl membership (set via control_space)
    Index n_segments = 0;
};

/// Lateral-shift fit with its quality diagnostics.
struct ShiftEstimate {
    Misreg delta;                // subaperture-pitch units
    Eigen::Matrix2d covariance;  // same units squared
    Real residual_rms = 0.0;
    VectorXd rho2d;           // per k: fitted coupling coefficients
    VectorXd rhot;            // per f: fitted correlation curve
    VectorXd rhot_smoothed;   // +-25 samples sliding mean
};

/// Projects each command frame to the low-resolution raster, takes its 2D
/// spatial DFT (c1 = Re, c2 = -Im at each half-plane k), and Welch-segments
/// the two time series (Hann window, per-segment mean removal).
/// k_max (1/m) optionally restricts the retained spatial frequencies.
SpectralSeries decompose(const Telemetry& t, const Projector& proj, Index segment_len,
                         Real overlap, Real k_max = 0.0);

/// rho_cl(k, f). Default: coherence-style averaging, the numerator averaged
/// over segments before normalizing by the averaged powers. per_segment
/// switches to the literal per-segment normalization, averaged afterwards.
SpectralCorr empirical_corr(const SpectralSeries& s, bool per_segment = false);

/// K^ctrl as a mode-counting disc: |k| <= sqrt(n_mod / pi) / pupil_diameter.
MaskX control_space(const LoopParams& p, Real pupil_diameter,
                    const Eigen::Matrix<Real, Eigen::Dynamic, 2>& k_grid);

/// Least-squares lateral error: rho_cl(k, f) ~ 2 pi rho0(f) k . delta over
/// k in K^ctrl and f >= f_min, with closed-form 2x2 normal equations.
/// rho0_curve must be sampled on c.f.
ShiftEstimate fit_shift(const SpectralCorr& c, const VectorXd& rho0_curve,
                        Real sub_pitch_delta, Real f_min = 0.0);

/// Per-k best-fit coupling coefficient against the rho0(f) template.
VectorXd coupling_map(const SpectralCorr& c, const VectorXd& rho0_curve);

/// Per-frequency best-fit correlation curve for a given shift (delta in
/// subaperture-pitch units); also returns the +-window sliding mean.
std::pair<VectorXd, VectorXd> correlation_curve(const SpectralCorr& c, Misreg delta,
                                                Real sub_pitch_delta, Index window = 25);

/// Sliding mean over +-window samples (window edges clamped).
VectorXd sliding_mean(const VectorXd& v, Index window);

/// Online monitoring mode: a single writer ingests command frames; every
/// completed Welch segment is folded into the running spectra and the
/// lateral-error fit is refreshed. Any thread may read the latest estimate
/// concurrently with ingestion.
class StreamingEstimator {
public:
    StreamingEstimator(Projector proj_low, LoopParams params, Real pupil_diameter,
                       Real sub_pitch_delta, Index segment_len, Real f_min = 0.0,
                       Real k_max = 0.0);

    /// Appends frames (rows are commands); processes complete segments.
    void ingest(const Eigen::Ref<const MatrixXd>& frames);

    Index segments() const;

    /// Latest fit, or nullopt until enough controlled content has been seen.
    std::optional<ShiftEstimate> latest() const;

private:
    void refit();

    Projector proj_;
    LoopParams params_;
    Real pupil_diameter_;
    Real sub_pitch_;
    Real f_min_;
    Index segment_len_;
    SpectralSeries series_;
    MaskX k_ctrl_;
    MatrixXd buffer_;
    Index buffered_ = 0;
    mutable std::mutex mutex_;
    Index published_segments_ = 0;
    std::optional<ShiftEstimate> latest_;
};

}  // namespace misreg

#endif
