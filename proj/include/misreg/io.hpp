#ifndef MISREG_IO_HPP
#define MISREG_IO_HPP

#include <iosfwd>
#include <string>

#include "misreg/cl_estimator.hpp"
#include "misreg/forward_model.hpp"
#include "misreg/loopsim.hpp"

namespace misreg {

/// One geometry document bundles the DM layout and the WFS grid:
/// {layout, pitch_m, positions: [[x, y], ...], clear_aperture_m,
///  n_side, pupil_diameter_m, central_obscuration, wfs_mask: row-major 0/1}.
struct GeometryFile {
    ActuatorGrid grid;
    SubapertureGrid sub;
};

GeometryFile read_geometry_json(std::istream& in);
GeometryFile read_geometry_file(const std::string& path);
void write_geometry_json(std::ostream& out, const GeometryFile& g);
void write_geometry_file(const std::string& path, const GeometryFile& g);

/// Loop parameter document, mirroring the published table fields:
/// {loop_hz, g_int, g_leak, n_mod} with optional tau_* overrides (seconds).
LoopParams read_loop_params_json(std::istream& in);
LoopParams read_loop_params_file(const std::string& path);
void write_loop_params_json(std::ostream& out, const LoopParams& p);
void write_loop_params_file(const std::string& path, const LoopParams& p);

/// Modal-IM container "MIM1": little-endian header (magic, n_modes, n_side,
/// sub_pitch_delta) + wfs/valid masks as bytes + 64-bit floats, all x-slope
/// maps then all y-slope maps, mode-major, row-major within a map.
void write_modal_im(std::ostream& out, const ModalIM& im);
void write_modal_im_file(const std::string& path, const ModalIM& im);
ModalIM read_modal_im(std::istream& in);
ModalIM read_modal_im_file(const std::string& path);

/// Telemetry container "TLM1": little-endian header (magic, frames, n_act,
/// frame_rate, gains, taus, n_mod, injected misregistration) + frame-major
/// 64-bit command floats.
void write_telemetry(std::ostream& out, const Telemetry& t);
void write_telemetry_file(const std::string& path, const Telemetry& t);
Telemetry read_telemetry(std::istream& in);
Telemetry read_telemetry_file(const std::string& path);

/// Correlation surface / curve dumps for plotting (CSV).
void write_corr_map_csv(std::ostream& out, const Map2D& values, Real scale_per_cell);
void write_rho2d_csv(std::ostream& out, const Eigen::Matrix<Real, Eigen::Dynamic, 2>& k_grid,
                     const VectorXd& rho2d, const MaskX& k_ctrl);
void write_rhot_csv(std::ostream& out, const VectorXd& f, const VectorXd& rhot,
                    const VectorXd& rhot_smoothed, const VectorXd& rho0);

}  // namespace misreg

#endif
