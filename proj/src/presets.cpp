#include "misreg/presets.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace misreg {

namespace {

// Aperture diameter (in pitch units) whose circular cut of an n x n integer
// lattice keeps exactly `target` points; the returned radius sits halfway
// between the last included and the first excluded lattice radius.
Real aperture_for_count(Index n_side, Index target) {
    std::map<long, Index> by_r2;
    for (Index iy = 0; iy < n_side; ++iy)
        for (Index ix = 0; ix < n_side; ++ix) {
            const long x = ix - n_side / 2, y = iy - n_side / 2;
            ++by_r2[x * x + y * y];
        }
    Index cum = 0;
    for (const auto& [r2, cnt] : by_r2) {
        cum += cnt;
        if (cum == target) {
            const auto next = by_r2.upper_bound(r2);
            const Real hi = next == by_r2.end() ? std::sqrt(static_cast<Real>(r2)) + 0.5
                                                : std::sqrt(static_cast<Real>(next->first));
            return std::sqrt(static_cast<Real>(r2)) + hi;  // 2 * midpoint radius
        }
        if (cum > target) break;
    }
    throw DegenerateGeometryError("aperture_for_count: target count not reachable");
}

}  // namespace

SimulationPreset preset_gpao40() {
    SimulationPreset p;
    p.name = "gpao40";
    const Real pupil = 8.0;
    const Real pitch = pupil / 40.0;
    // 1433 lattice points inside the aperture; dropping the central actuator
    // matches the 1432 active actuators of the GPAO DM.
    const Real aperture = aperture_for_count(44, 1433) * pitch;
    p.grid = build_cartesian_grid(44, pitch, aperture, /*include_center=*/false);
    p.sub = build_subaperture_grid(40, pupil, 0.14);
    p.loop = LoopParams::from_rate(1000.0, 0.5, 0.01, 800);
    p.n_basis_modes = 900;
    p.im_modes = 35;
    p.noise_sigma = 1.0;
    p.turbulence = TurbulenceSpec{0.14, 25.0, Vector2d(8.4, 0.0)};
    return p;
}

SimulationPreset preset_chara() {
    SimulationPreset p;
    p.name = "chara";
    const Real pupil = 1.0;
    p.grid = build_hex_grid(4, pupil / 8.0, /*include_center=*/false);  // 60 actuators
    p.sub = build_subaperture_grid(8, pupil, 0.25);
    p.loop = LoopParams::from_rate(441.0, 0.19, 0.01, 41);
    p.n_basis_modes = 55;
    p.im_modes = 30;
    p.noise_sigma = 1.0;
    return p;
}

SimulationPreset preset_ciao() {
    SimulationPreset p;
    p.name = "ciao";
    const Real pupil = 8.0;
    p.grid = build_hex_grid(4, pupil / 8.0, /*include_center=*/false);  // 60 actuators
    p.sub = build_subaperture_grid(9, pupil, 0.14);
    p.loop = LoopParams::from_rate(500.0, 0.4, 0.01, 45);
    p.n_basis_modes = 55;
    p.im_modes = 30;
    p.noise_sigma = 1.0;
    return p;
}

SimulationPreset make_square_preset(Index n_sub, Index n_mod, Real pupil_diameter,
                                    Real loop_hz, Real g_int, Real g_leak,
                                    const std::string& name) {
    SimulationPreset p;
    p.name = name;
    const Real pitch = pupil_diameter / static_cast<Real>(n_sub);
    p.grid = build_cartesian_grid(n_sub + 7, pitch, pupil_diameter + 6.0 * pitch);
    p.sub = build_subaperture_grid(n_sub, pupil_diameter, 0.0);
    p.loop = LoopParams::from_rate(loop_hz, g_int, g_leak, n_mod);
    p.n_basis_modes = std::min<Index>(p.grid.n_act() - 1, n_mod + n_mod / 2 + 10);
    p.im_modes = 35;
    p.noise_sigma = 1.0;
    return p;
}

SimulationPreset preset_by_name(const std::string& name) {
    if (name == "gpao40") return preset_gpao40();
    if (name == "chara") return preset_chara();
    if (name == "ciao") return preset_ciao();
    throw InputError("unknown preset '" + name + "' (expected gpao40, chara or ciao)");
}

FrozenFlowScreen make_screen_for(const SimulationPreset& preset, std::uint64_t seed) {
    const TurbulenceSpec spec = preset.turbulence.value_or(TurbulenceSpec{});
    const Projector phase = phase_projector(preset.grid, preset.sub);
    // smallest FFT-friendly screen covering twice the pupil and the raster
    Index n = std::max<Index>(phase.raster_n + 16,
                              static_cast<Index>(std::ceil(2.0 * preset.sub.pupil_diameter /
                                                           phase.pixel())));
    n = (n + 15) / 16 * 16;
    return make_frozen_flow(spec.r0, spec.outer_scale, spec.wind, n, phase.pixel(), seed);
}

}  // namespace misreg
