#ifndef MISREG_PRESETS_HPP
#define MISREG_PRESETS_HPP

#include <optional>
#include <string>

#include "misreg/loopsim.hpp"

namespace misreg {

struct TurbulenceSpec {
    Real r0 = 0.14;
    Real outer_scale = 25.0;
    Vector2d wind = Vector2d(8.4, 0.0);
};

/// A complete simulated bench: geometry, loop parameters and disturbance
/// levels. This is what the corrective loop, sweeps and the CLI operate on.
struct SimulationPreset {
    std::string name;
    ActuatorGrid grid;
    SubapertureGrid sub;
    LoopParams loop;
    Index n_basis_modes = 0;
    Index im_modes = 35;        // modes used by the open-loop 2D estimator
    Real im_noise_sigma = 0.0;  // slope noise when measuring a modal IM
    Real noise_sigma = 1.0;     // closed-loop measurement noise
    std::optional<TurbulenceSpec> turbulence;
};

/// GRAVITY+ visible mode: 40x40 Shack-Hartmann, 1432-actuator Cartesian DM.
SimulationPreset preset_gpao40();

/// CHARA unit: 60-actuator hexagonal DM, 441 Hz loop, gain 0.19, 41 modes.
SimulationPreset preset_chara();

/// GRAVITY/CIAO (MACAO): 60-actuator hexagonal DM, 500 Hz, gain 0.4, 45 modes.
SimulationPreset preset_ciao();

/// Parametric square system (Fried-like: actuator pitch equal to the
/// subaperture pitch, DM aperture slightly larger than the pupil).
SimulationPreset make_square_preset(Index n_sub, Index n_mod, Real pupil_diameter,
                                    Real loop_hz, Real g_int, Real g_leak,
                                    const std::string& name = "square");

SimulationPreset preset_by_name(const std::string& name);

/// Frozen-flow screen matched to the phase raster of the preset.
FrozenFlowScreen make_screen_for(const SimulationPreset& preset, std::uint64_t seed);

}  // namespace misreg

#endif
