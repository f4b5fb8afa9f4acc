#ifndef MISREG_GEOMETRY_HPP
#define MISREG_GEOMETRY_HPP

#include <Eigen/Sparse>

#include "misreg/types.hpp"

namespace misreg {

enum class DmLayout { cartesian, hexagonal };

/// Deformable-mirror actuator layout. Positions are in meters, centered on
/// the optical axis; for the Cartesian layout every position is an integer
/// multiple of the pitch.
struct ActuatorGrid {
    DmLayout layout = DmLayout::cartesian;
    Eigen::Matrix<Real, Eigen::Dynamic, 2> positions;
    Real pitch = 0.0;
    Real clear_aperture_diameter = 0.0;

    Index n_act() const { return positions.rows(); }
};

/// Shack-Hartmann sampling geometry: n_side x n_side subapertures covering
/// the pupil. wfs_mask marks the geometrically illuminated subapertures
/// (annulus between the central obscuration and the pupil edge).
/// sub_pitch_delta is the unit used for all misregistration values.
struct SubapertureGrid {
    Index n_side = 0;
    Real sub_pitch_delta = 0.0;
    Real pupil_diameter = 0.0;
    Real central_obscuration = 0.0;
    Mask2D wfs_mask;

    /// Center of subaperture (ix, iy) in meters.
    Real center(Index i) const {
        return (static_cast<Real>(i) + 0.5) * sub_pitch_delta - pupil_diameter / 2.0;
    }
};

/// Illumination-based subaperture selection (w^valid).
struct ValidMask {
    Mask2D valid;
    Real flux_threshold = 0.5;
};

/// Low-resolution linear map from actuator commands to a square raster,
/// used to give non-Cartesian DM commands a 2D representation.
///
/// Weights use a Gaussian influence kernel (FWHM = one actuator pitch,
/// truncated at 3 sigma). Each raster pixel is normalized by its total
/// kernel sum, saturated at 80% of the maximum sum, so a uniform command
/// maps to exactly 1 on interior pixels while an isolated actuator keeps
/// the kernel shape.
struct Projector {
    Index raster_n = 0;
    Real extent = 0.0;
    Real pixels_per_actuator = 0.0;
    Eigen::SparseMatrix<Real> weights;  // raster_n^2 x n_act, pixel-major rows

    Real pixel() const { return extent / static_cast<Real>(raster_n); }
    Real origin() const { return -extent / 2.0; }
};

/// All lattice points of an n_side x n_side grid within aperture_diameter/2
/// of the center. include_center=false drops the central actuator (used to
/// match DMs whose advertised count excludes it).
ActuatorGrid build_cartesian_grid(Index n_side, Real pitch, Real aperture_diameter,
                                  bool include_center = true);

/// Hexagonal layout: a center actuator plus 6r actuators on ring r,
/// 1 + 3 n_rings (n_rings + 1) in total (one less without the center).
ActuatorGrid build_hex_grid(Index n_rings, Real pitch, bool include_center = true);

SubapertureGrid build_subaperture_grid(Index n_side, Real pupil_diameter,
                                       Real central_obscuration);

/// valid = flux >= threshold_frac * median(flux over wfs_mask), restricted to
/// the illuminated region. Throws EmptyMaskError on all-zero flux.
ValidMask compute_valid_mask(const Map2D& flux, const SubapertureGrid& sub,
                             Real threshold_frac);

Projector build_projector(const ActuatorGrid& grid, Real pixels_per_actuator);

/// Same construction with the raster resolution given directly (used for the
/// internal phase-resolution rasters of the forward model).
Projector build_projector_with_pixel(const ActuatorGrid& grid, Real pixel_size);

/// Phase-resolution projector: at least 4 raster pixels per subaperture and
/// per actuator pitch, as the Shack-Hartmann model requires.
Projector phase_projector(const ActuatorGrid& grid, const SubapertureGrid& sub);

/// Applies the projector: output raster = weights * commands.
Raster project_commands(const Projector& p, const VectorXd& commands);

}  // namespace misreg

#endif
