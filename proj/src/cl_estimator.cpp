#include "misreg/cl_estimator.hpp"

#include <cmath>
#include <numbers>

#include "misreg/fft.hpp"

namespace misreg {

namespace {

constexpr Real kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

namespace detail {

SpectralSeries make_series_shell(const Projector& proj, Real frame_rate, Index segment_len,
                                 Real k_max) {
    if (segment_len < 16) throw InputError("decompose: segment_len must be >= 16");

    const Index n = proj.raster_n;
    const Real dk = 1.0 / proj.extent;

    // Half-plane spatial-frequency selection: kx > 0, plus (kx = 0, ky > 0).
    std::vector<std::pair<Real, Real>> ks;
    for (Index i = 0; i < n; ++i) {
        const Real ky = static_cast<Real>(fftutil::freq_index(i, n)) * dk;
        for (Index j = 0; j < n; ++j) {
            const Real kx = static_cast<Real>(fftutil::freq_index(j, n)) * dk;
            if (!(kx > 0.0 || (kx == 0.0 && ky > 0.0))) continue;
            if (k_max > 0.0 && std::hypot(kx, ky) > k_max) continue;
            ks.emplace_back(kx, ky);
        }
    }

    SpectralSeries s;
    s.frame_rate = frame_rate;
    s.k_grid.resize(static_cast<Index>(ks.size()), 2);
    for (Index i = 0; i < s.k_grid.rows(); ++i) {
        s.k_grid(i, 0) = ks[static_cast<std::size_t>(i)].first;
        s.k_grid(i, 1) = ks[static_cast<std::size_t>(i)].second;
    }

    const Index n_f = segment_len / 2;
    s.f.resize(n_f);
    for (Index i = 0; i < n_f; ++i)
        s.f(i) = static_cast<Real>(i + 1) * frame_rate / static_cast<Real>(segment_len);

    s.s12 = ArrayXXcd::Zero(s.n_k(), n_f);
    s.p11 = ArrayXXd::Zero(s.n_k(), n_f);
    s.p22 = ArrayXXd::Zero(s.n_k(), n_f);
    s.seg_mean_corr = ArrayXXd::Zero(s.n_k(), n_f);
    return s;
}

// Accumulates one Welch segment (L frames) into the series; seg_mean_corr is
// kept as a running sum and rescaled to a mean by its consumers.
void accumulate_segment(SpectralSeries& s, const Projector& proj,
                        const Eigen::Ref<const MatrixXd>& frames) {
    const Index n = proj.raster_n;
    const Index L = frames.rows();
    const Index n_k = s.n_k();
    const Index n_f = s.n_f();
    const Real dk = 1.0 / proj.extent;

    VectorXd hann(L);
    for (Index i = 0; i < L; ++i)
        hann(i) = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<Real>(i) / static_cast<Real>(L));

    // map the retained k's back to spatial DFT bins
    std::vector<Index> bins(static_cast<std::size_t>(n_k));
    for (Index q = 0; q < n_k; ++q) {
        Index jx = static_cast<Index>(std::lround(s.k_grid(q, 0) / dk));
        Index jy = static_cast<Index>(std::lround(s.k_grid(q, 1) / dk));
        if (jx < 0) jx += n;
        if (jy < 0) jy += n;
        bins[static_cast<std::size_t>(q)] = jy * n + jx;
    }

    MatrixXd c1(L, n_k), c2(L, n_k);
    for (Index l = 0; l < L; ++l) {
        const Raster r = project_commands(proj, frames.row(l).transpose());
        const ArrayXXcd spec = fftutil::fft2(r.values.cast<Complex>());
        for (Index q = 0; q < n_k; ++q) {
            const Complex v = spec(bins[static_cast<std::size_t>(q)] / n,
                                   bins[static_cast<std::size_t>(q)] % n);
            c1(l, q) = v.real();
            c2(l, q) = -v.imag();  // sine coefficient
        }
    }
    VectorXd seg(L);
    for (Index q = 0; q < n_k; ++q) {
        seg = (c1.col(q).array() - c1.col(q).mean()).matrix().cwiseProduct(hann);
        const VectorXcd x1 = fftutil::spectrum_positive(seg);
        seg = (c2.col(q).array() - c2.col(q).mean()).matrix().cwiseProduct(hann);
        const VectorXcd x2 = fftutil::spectrum_positive(seg);
        for (Index b = 0; b < n_f; ++b) {
            const Complex cross = std::conj(x1(b)) * x2(b);
            s.s12(q, b) += cross;
            s.p11(q, b) += std::norm(x1(b));
            s.p22(q, b) += std::norm(x2(b));
            const Real mag = std::abs(x1(b)) * std::abs(x2(b));
            if (mag > 0.0) s.seg_mean_corr(q, b) += cross.imag() / mag;
        }
    }
    ++s.n_segments;
}

}  // namespace detail

SpectralSeries decompose(const Telemetry& t, const Projector& proj, Index segment_len,
                         Real overlap, Real k_max) {
    const Index T = t.frames();
    if (segment_len > T) throw InputError("decompose: segment longer than the telemetry");
    if (overlap < 0.0 || overlap > 0.9) throw InputError("decompose: overlap must be in [0, 0.9]");
    if (t.commands.cols() != proj.weights.cols())
        throw InputError("decompose: telemetry actuator count does not match the projector");

    SpectralSeries s = detail::make_series_shell(proj, t.frame_rate, segment_len, k_max);
    const Index L = segment_len;
    const Index step = std::max<Index>(
        1, static_cast<Index>(std::lround((1.0 - overlap) * static_cast<Real>(L))));
    const Index n_seg = (T - L) / step + 1;
    for (Index sgi = 0; sgi < n_seg; ++sgi)
        detail::accumulate_segment(s, proj, t.commands.middleRows(sgi * step, L));
    // normalize the literal-variant running sum to a per-segment mean
    s.seg_mean_corr /= static_cast<Real>(n_seg);
    return s;
}

SpectralCorr empirical_corr(const SpectralSeries& s, bool per_segment) {
    if (s.n_segments < 1) throw InputError("empirical_corr: no segments");

    SpectralCorr c;
    c.k_grid = s.k_grid;
    c.f = s.f;
    c.n_segments = s.n_segments;
    c.rho = ArrayXXd::Zero(s.n_k(), s.n_f());
    // zero-power channels, with a floor relative to the overall power scale
    // so that pure FFT roundoff (power ~1e-30 of the carrier) counts as zero
    const Real floor_p = 1e-24 * std::max(s.p11.maxCoeff(), s.p22.maxCoeff());
    c.excluded = (s.p11 <= floor_p) || (s.p22 <= floor_p);
    if (per_segment) {
        c.rho = s.seg_mean_corr;
        c.rho = c.excluded.select(0.0, c.rho);
        return c;
    }
    for (Index q = 0; q < s.n_k(); ++q)
        for (Index b = 0; b < s.n_f(); ++b)
            if (!c.excluded(q, b))
                c.rho(q, b) = s.s12(q, b).imag() / std::sqrt(s.p11(q, b) * s.p22(q, b));
    return c;
}

MaskX control_space(const LoopParams& p, Real pupil_diameter,
                    const Eigen::Matrix<Real, Eigen::Dynamic, 2>& k_grid) {
    if (p.n_mod < 1) throw InputError("control_space: n_mod must be >= 1");
    const Real k_ctrl = std::sqrt(static_cast<Real>(p.n_mod) / std::numbers::pi) / pupil_diameter;
    MaskX mask(k_grid.rows());
    for (Index i = 0; i < k_grid.rows(); ++i)
        mask(i) = std::hypot(k_grid(i, 0), k_grid(i, 1)) <= k_ctrl;
    return mask;
}

ShiftEstimate fit_shift(const SpectralCorr& c, const VectorXd& rho0_curve,
                        Real sub_pitch_delta, Real f_min) {
    if (rho0_curve.size() != c.f.size())
        throw InputError("fit_shift: rho0 curve not sampled on the correlation grid");
    if (c.k_ctrl.size() != c.k_grid.rows())
        throw InputError("fit_shift: control-space mask not set");
    if (c.k_ctrl.count() < 3)
        throw DegenerateFitError("fit_shift: need at least 3 controlled spatial frequencies");

    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    Index n_used = 0;
    for (Index q = 0; q < c.k_grid.rows(); ++q) {
        if (!c.k_ctrl(q)) continue;
        const Eigen::Vector2d kv = c.k_grid.row(q).transpose();
        for (Index i = 0; i < c.f.size(); ++i) {
            if (c.excluded(q, i) || c.f(i) < f_min) continue;
            const Eigen::Vector2d g = kTwoPi * rho0_curve(i) * kv;
            a += g * g.transpose();
            b += g * c.rho(q, i);
            ++n_used;
        }
    }
    if (n_used < 3 || std::abs(a.determinant()) < 1e-30 * a.trace() * a.trace())
        throw DegenerateFitError("fit_shift: rank-deficient normal matrix");

    const Eigen::Vector2d delta_m = a.ldlt().solve(b);

    Real ssr = 0.0;
    for (Index q = 0; q < c.k_grid.rows(); ++q) {
        if (!c.k_ctrl(q)) continue;
        const Eigen::Vector2d kv = c.k_grid.row(q).transpose();
        for (Index i = 0; i < c.f.size(); ++i) {
            if (c.excluded(q, i) || c.f(i) < f_min) continue;
            const Real model = kTwoPi * rho0_curve(i) * kv.dot(delta_m);
            const Real r = c.rho(q, i) - model;
            ssr += r * r;
        }
    }

    ShiftEstimate est;
    est.delta = {delta_m.x() / sub_pitch_delta, delta_m.y() / sub_pitch_delta};
    const Real sigma2 = ssr / static_cast<Real>(std::max<Index>(n_used - 2, 1));
    est.covariance = sigma2 * a.inverse() / (sub_pitch_delta * sub_pitch_delta);
    est.residual_rms = std::sqrt(ssr / static_cast<Real>(n_used));
    est.rho2d = coupling_map(c, rho0_curve);
    auto curves = correlation_curve(c, est.delta, sub_pitch_delta);
    est.rhot = std::move(curves.first);
    est.rhot_smoothed = std::move(curves.second);
    return est;
}

VectorXd coupling_map(const SpectralCorr& c, const VectorXd& rho0_curve) {
    if (rho0_curve.size() != c.f.size())
        throw InputError("coupling_map: rho0 curve not sampled on the correlation grid");
    VectorXd out = VectorXd::Zero(c.k_grid.rows());
    for (Index q = 0; q < c.k_grid.rows(); ++q) {
        Real num = 0.0, den = 0.0;
        for (Index i = 0; i < c.f.size(); ++i) {
            if (c.excluded(q, i)) continue;
            num += c.rho(q, i) * rho0_curve(i);
            den += rho0_curve(i) * rho0_curve(i);
        }
        out(q) = den > 0.0 ? num / den : 0.0;
    }
    return out;
}

std::pair<VectorXd, VectorXd> correlation_curve(const SpectralCorr& c, Misreg delta,
                                                Real sub_pitch_delta, Index window) {
    if (c.k_ctrl.size() != c.k_grid.rows())
        throw InputError("correlation_curve: control-space mask not set");
    const Eigen::Vector2d dm(delta.dx * sub_pitch_delta, delta.dy * sub_pitch_delta);
    VectorXd rhot = VectorXd::Zero(c.f.size());
    for (Index i = 0; i < c.f.size(); ++i) {
        Real num = 0.0, den = 0.0;
        for (Index q = 0; q < c.k_grid.rows(); ++q) {
            if (!c.k_ctrl(q) || c.excluded(q, i)) continue;
            const Real kd = c.k_grid.row(q).transpose().dot(dm);
            num += c.rho(q, i) * kd;
            den += kTwoPi * kd * kd;
        }
        rhot(i) = den > 0.0 ? num / den : 0.0;
    }
    return {rhot, sliding_mean(rhot, window)};
}

VectorXd sliding_mean(const VectorXd& v, Index window) {
    VectorXd out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        const Index lo = std::max<Index>(0, i - window);
        const Index hi = std::min<Index>(v.size() - 1, i + window);
        out(i) = v.segment(lo, hi - lo + 1).mean();
    }
    return out;
}


StreamingEstimator::StreamingEstimator(Projector proj_low, LoopParams params,
                                       Real pupil_diameter, Real sub_pitch_delta,
                                       Index segment_len, Real f_min, Real k_max)
    : proj_(std::move(proj_low)),
      params_(params),
      pupil_diameter_(pupil_diameter),
      sub_pitch_(sub_pitch_delta),
      f_min_(f_min),
      segment_len_(segment_len),
      series_(detail::make_series_shell(proj_, params.frame_rate(), segment_len, k_max)),
      k_ctrl_(control_space(params, pupil_diameter, series_.k_grid)),
      buffer_(segment_len, proj_.weights.cols()) {}

void StreamingEstimator::ingest(const Eigen::Ref<const MatrixXd>& frames) {
    if (frames.cols() != proj_.weights.cols())
        throw InputError("StreamingEstimator: actuator count mismatch");
    Index row = 0;
    while (row < frames.rows()) {
        const Index take = std::min(frames.rows() - row, segment_len_ - buffered_);
        buffer_.middleRows(buffered_, take) = frames.middleRows(row, take);
        buffered_ += take;
        row += take;
        if (buffered_ == segment_len_) {
            detail::accumulate_segment(series_, proj_, buffer_);
            buffered_ = 0;
            refit();
        }
    }
}

Index StreamingEstimator::segments() const {
    const std::lock_guard<std::mutex> lock(mutex_);
    return published_segments_;
}

void StreamingEstimator::refit() {
    SpectralSeries snapshot = series_;
    snapshot.seg_mean_corr /= static_cast<Real>(std::max<Index>(1, snapshot.n_segments));
    SpectralCorr corr = empirical_corr(snapshot);
    corr.k_ctrl = k_ctrl_;
    std::optional<ShiftEstimate> est;
    try {
        est = fit_shift(corr, rho0_curve(corr.f, params_), sub_pitch_, f_min_);
    } catch (const DegenerateFitError&) {
        // not enough usable cells yet; keep the previous estimate
    }
    const std::lock_guard<std::mutex> lock(mutex_);
    published_segments_ = series_.n_segments;
    if (est) latest_ = std::move(est);
}

std::optional<ShiftEstimate> StreamingEstimator::latest() const {
    const std::lock_guard<std::mutex> lock(mutex_);
    return latest_;
}

}  // namespace misreg
