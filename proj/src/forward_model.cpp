#include "misreg/forward_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace misreg {

namespace {

// Catmull-Rom weights and derivatives at fractional offset t in [0, 1).
void catmull_rom(Real t, std::array<Real, 4>& w, std::array<Real, 4>& dw) {
    const Real t2 = t * t, t3 = t2 * t;
    w = {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0,
         -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
    dw = {-1.5 * t2 + 2.0 * t - 0.5, 4.5 * t2 - 5.0 * t, -4.5 * t2 + 4.0 * t + 0.5,
          1.5 * t2 - t};
}

}  // namespace

ModalBasis build_kl_basis(const ActuatorGrid& grid, Index n_modes, Real r0_over_d) {
    const Index n = grid.n_act();
    if (n_modes > n - 1)
        throw InputError("build_kl_basis: piston removal leaves at most n_act - 1 modes");
    if (n_modes < 1) throw InputError("build_kl_basis: n_modes must be >= 1");

    const Real r0 = r0_over_d * grid.clear_aperture_diameter;
    MatrixXd cov(n, n);
    for (Index i = 0; i < n; ++i) {
        cov(i, i) = 0.0;
        for (Index j = 0; j < i; ++j) {
            const Real d = (grid.positions.row(i) - grid.positions.row(j)).norm();
            cov(i, j) = cov(j, i) = -0.5 * 6.88 * std::pow(d / r0, 5.0 / 3.0);
        }
    }
    // Project piston out on both sides; the remaining operator is PSD on 1^perp.
    const VectorXd row_mean = cov.rowwise().mean();
    const Real total_mean = row_mean.mean();
    cov.colwise() -= row_mean;
    cov.rowwise() -= row_mean.transpose();
    cov.array() += total_mean;

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    ModalBasis basis;
    basis.modes.resize(n_modes, n);
    basis.eigenvalues.resize(n_modes);
    for (Index m = 0; m < n_modes; ++m) {
        basis.modes.row(m) = eig.eigenvectors().col(n - 1 - m).transpose();
        basis.eigenvalues(m) = eig.eigenvalues()(n - 1 - m);
    }
    return basis;
}

SlopeOperator build_slope_operator(const SubapertureGrid& sub, Index raster_n, Real extent,
                                   Misreg shift, Index samples_per_axis) {
    const Real pixel = extent / static_cast<Real>(raster_n);
    const Real delta = sub.sub_pitch_delta;
    if (pixel > delta / 4.0 * (1.0 + 1e-9))
        throw InputError("build_slope_operator: raster needs >= 4 pixels per subaperture");

    Index g = samples_per_axis;
    if (g <= 0) g = std::clamp<Index>(static_cast<Index>(std::lround(delta / pixel)), 2, 8);

    const Index n = sub.n_side;
    const Real origin = -extent / 2.0;
    const Real pupil_edge = -sub.pupil_diameter / 2.0;

    std::vector<Eigen::Triplet<Real>> tx, ty;
    tx.reserve(static_cast<std::size_t>(sub.wfs_mask.count()) * g * g * 16);
    ty.reserve(tx.capacity());
    std::array<Real, 4> wx, dwx, wy, dwy;

    for (Index iy = 0; iy < n; ++iy) {
        for (Index ix = 0; ix < n; ++ix) {
            if (!sub.wfs_mask(iy, ix)) continue;
            const Index row = iy * n + ix;
            const Real x0 = pupil_edge + (static_cast<Real>(ix) - shift.dx) * delta;
            const Real y0 = pupil_edge + (static_cast<Real>(iy) - shift.dy) * delta;
            for (Index sy_i = 0; sy_i < g; ++sy_i) {
                for (Index sx_i = 0; sx_i < g; ++sx_i) {
                    const Real xs = x0 + (static_cast<Real>(sx_i) + 0.5) * delta / static_cast<Real>(g);
                    const Real ys = y0 + (static_cast<Real>(sy_i) + 0.5) * delta / static_cast<Real>(g);
                    // raster pixel-center coordinates
                    const Real gx = (xs - origin) / pixel - 0.5;
                    const Real gy = (ys - origin) / pixel - 0.5;
                    const Index jx = static_cast<Index>(std::floor(gx));
                    const Index jy = static_cast<Index>(std::floor(gy));
                    catmull_rom(gx - static_cast<Real>(jx), wx, dwx);
                    catmull_rom(gy - static_cast<Real>(jy), wy, dwy);
                    const Real norm = 1.0 / (static_cast<Real>(g * g) * pixel);
                    for (int a = 0; a < 4; ++a) {
                        const Index py = std::clamp<Index>(jy - 1 + a, 0, raster_n - 1);
                        for (int b = 0; b < 4; ++b) {
                            const Index px = std::clamp<Index>(jx - 1 + b, 0, raster_n - 1);
                            const Index col = py * raster_n + px;
                            tx.emplace_back(row, col, wy[a] * dwx[b] * norm);
                            ty.emplace_back(row, col, dwy[a] * wx[b] * norm);
                        }
                    }
                }
            }
        }
    }

    SlopeOperator op;
    op.n_side = n;
    op.raster_n = raster_n;
    op.sx.resize(n * n, raster_n * raster_n);
    op.sy.resize(n * n, raster_n * raster_n);
    op.sx.setFromTriplets(tx.begin(), tx.end());
    op.sy.setFromTriplets(ty.begin(), ty.end());
    return op;
}

std::pair<Map2D, Map2D> sh_slopes(const Raster& phase, const SubapertureGrid& sub,
                                  Misreg shift) {
    const SlopeOperator op = build_slope_operator(sub, phase.n(), phase.extent, shift);
    using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor vals = phase.values.matrix();
    const Eigen::Map<const VectorXd> flat(vals.data(), vals.size());
    VectorXd fx = op.sx * flat;
    VectorXd fy = op.sy * flat;
    const Index n = sub.n_side;
    Map2D sx = Eigen::Map<RowMajor>(fx.data(), n, n).array();
    Map2D sy = Eigen::Map<RowMajor>(fy.data(), n, n).array();
    return {std::move(sx), std::move(sy)};
}

Map2D illumination_flux(const SubapertureGrid& sub, Misreg shift, Index supersample) {
    const Index n = sub.n_side;
    const Real delta = sub.sub_pitch_delta;
    const Real edge = -sub.pupil_diameter / 2.0;
    const Real radius = sub.pupil_diameter / 2.0;
    Map2D flux = Map2D::Zero(n, n);
    for (Index iy = 0; iy < n; ++iy) {
        for (Index ix = 0; ix < n; ++ix) {
            const Real x0 = edge + (static_cast<Real>(ix) - shift.dx) * delta;
            const Real y0 = edge + (static_cast<Real>(iy) - shift.dy) * delta;
            Index inside = 0;
            for (Index a = 0; a < supersample; ++a) {
                const Real y = y0 + (static_cast<Real>(a) + 0.5) * delta / static_cast<Real>(supersample);
                for (Index b = 0; b < supersample; ++b) {
                    const Real x = x0 + (static_cast<Real>(b) + 0.5) * delta / static_cast<Real>(supersample);
                    const Real r = std::hypot(x, y) / radius;
                    if (r > sub.central_obscuration && r <= 1.0) ++inside;
                }
            }
            flux(iy, ix) = static_cast<Real>(inside) / static_cast<Real>(supersample * supersample);
        }
    }
    return flux;
}

ModalIM build_modal_im(const ModalBasis& basis, const Projector& proj,
                       const SubapertureGrid& sub, Misreg shift, Real noise_sigma,
                       Index n_modes_used, std::uint64_t seed, Real flux_threshold) {
    if (n_modes_used > basis.n_modes())
        throw InputError("build_modal_im: n_modes_used exceeds the basis size");

    ModalIM im;
    im.n_side = sub.n_side;
    im.sub_pitch_delta = sub.sub_pitch_delta;
    im.wfs_mask = sub.wfs_mask;
    im.valid = compute_valid_mask(illumination_flux(sub, shift), sub, flux_threshold).valid;
    const Mask2D live = im.wfs_mask && im.valid;

    const SlopeOperator op = build_slope_operator(sub, proj.raster_n, proj.extent, shift);
    using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Index n = sub.n_side;

    im.slopes_x.reserve(n_modes_used);
    im.slopes_y.reserve(n_modes_used);
    for (Index m = 0; m < n_modes_used; ++m) {
        VectorXd raster = proj.weights * basis.modes.row(m).transpose();
        VectorXd fx = op.sx * raster;
        VectorXd fy = op.sy * raster;
        Map2D sx = Eigen::Map<RowMajor>(fx.data(), n, n).array();
        Map2D sy = Eigen::Map<RowMajor>(fy.data(), n, n).array();
        if (noise_sigma > 0) {
            std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(m)));
            std::normal_distribution<Real> gauss(0.0, noise_sigma);
            for (Index iy = 0; iy < n; ++iy)
                for (Index ix = 0; ix < n; ++ix)
                    if (live(iy, ix)) {
                        sx(iy, ix) += gauss(rng);
                        sy(iy, ix) += gauss(rng);
                    }
        }
        sx *= live.cast<Real>();
        sy *= live.cast<Real>();
        im.slopes_x.push_back(std::move(sx));
        im.slopes_y.push_back(std::move(sy));
    }
    return im;
}

}  // namespace misreg
