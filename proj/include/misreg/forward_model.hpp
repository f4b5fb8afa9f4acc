#ifndef MISREG_FORWARD_MODEL_HPP
#define MISREG_FORWARD_MODEL_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "misreg/geometry.hpp"

namespace misreg {

/// Karhunen-Loeve command-space modes: rows are mutually orthonormal mode
/// vectors, piston-free, sorted by decreasing turbulent variance.
struct ModalBasis {
    MatrixXd modes;        // n_modes x n_act
    VectorXd eigenvalues;  // matching turbulent variances, decreasing

    Index n_modes() const { return modes.rows(); }
};

/// Per-mode 2D slope maps of a (measured or reference) modal interaction
/// matrix. Slopes are exactly zero outside valid && wfs_mask.
struct ModalIM {
    std::vector<Map2D> slopes_x, slopes_y;
    Mask2D wfs_mask;  // w^wfs: geometric model validity
    Mask2D valid;     // w^valid: illumination at this IM's shift
    Index n_side = 0;
    Real sub_pitch_delta = 0.0;

    Index n_modes() const { return static_cast<Index>(slopes_x.size()); }
};

/// Sparse linear operators mapping a phase raster (row-major flattened) to
/// x/y slope maps: per subaperture, the mean bicubic-interpolated gradient
/// over the sampling window displaced by the misregistration.
struct SlopeOperator {
    Eigen::SparseMatrix<Real> sx, sy;  // n_side^2 x raster_n^2
    Index n_side = 0;
    Index raster_n = 0;
};

/// Eigenmodes of the Kolmogorov phase covariance sampled at the actuator
/// positions, piston projected out. r0_over_d scales the turbulent variances
/// only; the mode shapes are r0-independent.
ModalBasis build_kl_basis(const ActuatorGrid& grid, Index n_modes, Real r0_over_d = 0.2);

SlopeOperator build_slope_operator(const SubapertureGrid& sub, Index raster_n, Real extent,
                                   Misreg shift, Index samples_per_axis = 0);

/// Geometric Shack-Hartmann model. A positive shift translates the measured
/// slope pattern toward +x/+y; fractional shifts evaluate the raster at the
/// displaced windows (no slope-map interpolation).
std::pair<Map2D, Map2D> sh_slopes(const Raster& phase, const SubapertureGrid& sub,
                                  Misreg shift = {});

/// Fraction of each (shifted) subaperture window inside the pupil annulus.
Map2D illumination_flux(const SubapertureGrid& sub, Misreg shift = {},
                        Index supersample = 8);

/// Builds the modal IM of the first n_modes_used basis modes as seen through
/// the projector raster and the shifted WFS, with i.i.d. Gaussian slope noise
/// drawn from a per-mode seeded stream.
ModalIM build_modal_im(const ModalBasis& basis, const Projector& proj,
                       const SubapertureGrid& sub, Misreg shift, Real noise_sigma,
                       Index n_modes_used, std::uint64_t seed = 0,
                       Real flux_threshold = 0.5);

}  // namespace misreg

#endif
