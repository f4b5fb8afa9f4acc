#include "misreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace misreg {

namespace {

ActuatorGrid make_grid(DmLayout layout, std::vector<Eigen::Vector2d>&& pts, Real pitch,
                       Real aperture) {
    ActuatorGrid g;
    g.layout = layout;
    g.pitch = pitch;
    g.clear_aperture_diameter = aperture;
    g.positions.resize(static_cast<Index>(pts.size()), 2);
    for (Index i = 0; i < g.positions.rows(); ++i) g.positions.row(i) = pts[i].transpose();
    return g;
}

}  // namespace

ActuatorGrid build_cartesian_grid(Index n_side, Real pitch, Real aperture_diameter,
                                  bool include_center) {
    if (n_side < 2) throw InputError("build_cartesian_grid: n_side must be >= 2");
    if (pitch <= 0) throw InputError("build_cartesian_grid: pitch must be > 0");

    const Real radius = aperture_diameter / 2.0;
    std::vector<Eigen::Vector2d> pts;
    for (Index iy = 0; iy < n_side; ++iy) {
        for (Index ix = 0; ix < n_side; ++ix) {
            const Real x = static_cast<Real>(ix - n_side / 2) * pitch;
            const Real y = static_cast<Real>(iy - n_side / 2) * pitch;
            if (std::hypot(x, y) > radius) continue;
            if (!include_center && x == 0.0 && y == 0.0) continue;
            pts.emplace_back(x, y);
        }
    }
    if (pts.size() < 2)
        throw DegenerateGeometryError("build_cartesian_grid: aperture selects fewer than 2 actuators");
    return make_grid(DmLayout::cartesian, std::move(pts), pitch, aperture_diameter);
}

ActuatorGrid build_hex_grid(Index n_rings, Real pitch, bool include_center) {
    if (n_rings < 1) throw InputError("build_hex_grid: n_rings must be >= 1");

    // Axial coordinates (q, r) with hex distance <= n_rings.
    const Real sq3_2 = std::sqrt(3.0) / 2.0;
    std::vector<Eigen::Vector2d> pts;
    for (Index q = -n_rings; q <= n_rings; ++q) {
        const Index rlo = std::max(-n_rings, -q - n_rings);
        const Index rhi = std::min(n_rings, -q + n_rings);
        for (Index r = rlo; r <= rhi; ++r) {
            if (!include_center && q == 0 && r == 0) continue;
            const Real x = pitch * (static_cast<Real>(q) + static_cast<Real>(r) / 2.0);
            const Real y = pitch * sq3_2 * static_cast<Real>(r);
            pts.emplace_back(x, y);
        }
    }
    return make_grid(DmLayout::hexagonal, std::move(pts), pitch,
                     (2.0 * static_cast<Real>(n_rings) + 1.0) * pitch);
}

SubapertureGrid build_subaperture_grid(Index n_side, Real pupil_diameter,
                                       Real central_obscuration) {
    if (n_side < 4) throw InputError("build_subaperture_grid: n_side must be >= 4");
    if (central_obscuration < 0 || central_obscuration >= 1)
        throw InputError("build_subaperture_grid: obscuration must be in [0, 1)");

    SubapertureGrid sub;
    sub.n_side = n_side;
    sub.pupil_diameter = pupil_diameter;
    sub.central_obscuration = central_obscuration;
    sub.sub_pitch_delta = pupil_diameter / static_cast<Real>(n_side);
    sub.wfs_mask.resize(n_side, n_side);
    const Real pupil_radius = pupil_diameter / 2.0;
    for (Index iy = 0; iy < n_side; ++iy) {
        for (Index ix = 0; ix < n_side; ++ix) {
            const Real r = std::hypot(sub.center(ix), sub.center(iy)) / pupil_radius;
            sub.wfs_mask(iy, ix) = r > central_obscuration && r <= 1.0;
        }
    }
    return sub;
}

ValidMask compute_valid_mask(const Map2D& flux, const SubapertureGrid& sub,
                             Real threshold_frac) {
    if (flux.rows() != sub.n_side || flux.cols() != sub.n_side)
        throw InputError("compute_valid_mask: flux shape mismatch");
    if ((flux < 0).any()) throw InputError("compute_valid_mask: flux must be non-negative");

    std::vector<Real> illuminated;
    illuminated.reserve(static_cast<std::size_t>(sub.wfs_mask.count()));
    for (Index iy = 0; iy < sub.n_side; ++iy)
        for (Index ix = 0; ix < sub.n_side; ++ix)
            if (sub.wfs_mask(iy, ix)) illuminated.push_back(flux(iy, ix));

    if (illuminated.empty() ||
        *std::max_element(illuminated.begin(), illuminated.end()) <= 0.0)
        throw EmptyMaskError("compute_valid_mask: no measurable flux");

    const auto mid = illuminated.begin() + static_cast<std::ptrdiff_t>(illuminated.size() / 2);
    std::nth_element(illuminated.begin(), mid, illuminated.end());
    const Real cut = threshold_frac * *mid;

    ValidMask vm;
    vm.flux_threshold = threshold_frac;
    vm.valid = sub.wfs_mask && (flux >= cut);
    if (!vm.valid.any()) throw EmptyMaskError("compute_valid_mask: threshold leaves no subaperture");
    return vm;
}

Projector build_projector(const ActuatorGrid& grid, Real pixels_per_actuator) {
    if (pixels_per_actuator < 1.0 || pixels_per_actuator > 4.0)
        throw InputError("build_projector: pixels_per_actuator must be in [1, 4]");
    Projector p = build_projector_with_pixel(grid, grid.pitch / pixels_per_actuator);
    p.pixels_per_actuator = pixels_per_actuator;
    return p;
}

Projector phase_projector(const ActuatorGrid& grid, const SubapertureGrid& sub) {
    return build_projector_with_pixel(grid, std::min(grid.pitch, sub.sub_pitch_delta) / 4.0);
}

Projector build_projector_with_pixel(const ActuatorGrid& grid, Real pixel_size) {
    if (pixel_size <= 0) throw InputError("build_projector: pixel size must be > 0");

    Projector p;
    p.pixels_per_actuator = grid.pitch / pixel_size;
    p.extent = grid.clear_aperture_diameter;
    p.raster_n = static_cast<Index>(std::ceil(grid.clear_aperture_diameter / pixel_size));

    const Real sigma = grid.pitch / 2.354820045;  // FWHM = one pitch
    const Real cut2 = 9.0 * sigma * sigma;
    const Real pix = p.pixel();
    const Index n = p.raster_n;
    const Index n_act = grid.n_act();

    Map2D kernel_sum = Map2D::Zero(n, n);
    std::vector<Eigen::Triplet<Real>> trips;
    for (Index iy = 0; iy < n; ++iy) {
        const Real py = p.origin() + (static_cast<Real>(iy) + 0.5) * pix;
        for (Index ix = 0; ix < n; ++ix) {
            const Real px = p.origin() + (static_cast<Real>(ix) + 0.5) * pix;
            for (Index a = 0; a < n_act; ++a) {
                const Real dx = px - grid.positions(a, 0);
                const Real dy = py - grid.positions(a, 1);
                const Real d2 = dx * dx + dy * dy;
                if (d2 > cut2) continue;
                const Real w = std::exp(-d2 / (2.0 * sigma * sigma));
                trips.emplace_back(iy * n + ix, a, w);
                kernel_sum(iy, ix) += w;
            }
        }
    }

    const Real saturation = 0.8 * kernel_sum.maxCoeff();
    for (auto& t : trips) {
        const Real s = kernel_sum(t.row() / n, t.row() % n);
        t = {t.row(), t.col(), t.value() / std::max(s, saturation)};
    }
    p.weights.resize(n * n, n_act);
    p.weights.setFromTriplets(trips.begin(), trips.end());
    return p;
}

Raster project_commands(const Projector& p, const VectorXd& commands) {
    if (commands.size() != p.weights.cols())
        throw InputError("project_commands: command length does not match actuator count");
    Raster r;
    r.extent = p.extent;
    VectorXd flat = p.weights * commands;
    // weight rows are pixel-major (iy * n + ix), i.e. row-major in the raster
    r.values = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   flat.data(), p.raster_n, p.raster_n)
                   .array();
    return r;
}

}  // namespace misreg
