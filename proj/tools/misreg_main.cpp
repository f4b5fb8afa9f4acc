// misreg: lateral DM/WFS misregistration estimation toolkit.
//
// Subcommands: geometry, sim-im, sim-loop, estimate-2d, estimate-cl, align,
// sweep, report. Exit codes: 0 success, 2 non-convergence, 3 loop
// instability, 4 input error.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include "misreg/alignment.hpp"
#include "misreg/io.hpp"
#include "misreg/presets.hpp"

using namespace misreg;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNonConvergence = 2;
constexpr int kExitInstability = 3;
constexpr int kExitInputError = 4;

Misreg parse_misreg(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos)
        throw InputError("expected 'dx,dy' (subaperture units), got '" + s + "'");
    try {
        return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw InputError("cannot parse shift '" + s + "'");
    }
}

struct SystemArgs {
    std::string preset;
    std::string geometry_file;
    std::string params_file;
    Index n_mod_override = 0;
    Real g_int_override = 0.0;
    Real g_leak_override = -1.0;
    Real loop_hz_override = 0.0;
    Real noise_override = -1.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "built-in preset: gpao40, chara, ciao");
        cmd->add_option("--geometry", geometry_file, "geometry JSON file");
        cmd->add_option("--params", params_file, "loop parameter JSON file");
        cmd->add_option("--n-mod", n_mod_override, "controlled mode count override");
        cmd->add_option("--g-int", g_int_override, "integral gain override");
        cmd->add_option("--g-leak", g_leak_override, "leak gain override");
        cmd->add_option("--loop-hz", loop_hz_override, "loop rate override (Hz)");
        cmd->add_option("--loop-noise", noise_override, "loop measurement noise sigma override");
    }

    // Precedence: explicit flags > params file > preset defaults.
    SimulationPreset resolve() const {
        SimulationPreset sys;
        if (!preset.empty()) {
            sys = preset_by_name(preset);
        } else if (!geometry_file.empty()) {
            const GeometryFile g = read_geometry_file(geometry_file);
            sys.name = "custom";
            sys.grid = g.grid;
            sys.sub = g.sub;
            sys.loop = LoopParams::from_rate(500.0, 0.4, 0.01,
                                             std::max<Index>(1, g.grid.n_act() / 6));
            sys.n_basis_modes =
                std::min<Index>(g.grid.n_act() - 1, sys.loop.n_mod + 40);
        } else {
            throw InputError("need --preset or --geometry");
        }
        if (!params_file.empty()) {
            const Index keep_basis = sys.n_basis_modes;
            sys.loop = read_loop_params_file(params_file);
            sys.n_basis_modes =
                std::min<Index>(sys.grid.n_act() - 1, std::max(keep_basis, sys.loop.n_mod + 20));
        }
        if (loop_hz_override > 0) {
            const Real tau = 1.0 / loop_hz_override;
            sys.loop.tau_wfs = sys.loop.tau_rtc = sys.loop.tau_lat = sys.loop.tau_dm = tau;
        }
        if (g_int_override > 0) sys.loop.g_int = g_int_override;
        if (g_leak_override >= 0) sys.loop.g_leak = g_leak_override;
        if (n_mod_override > 0) {
            sys.loop.n_mod = n_mod_override;
            sys.n_basis_modes =
                std::min<Index>(sys.grid.n_act() - 1, std::max(sys.n_basis_modes, n_mod_override + 20));
        }
        if (noise_override >= 0) sys.noise_sigma = noise_override;
        if (sys.loop.n_mod > sys.grid.n_act() - 1)
            throw InputError("n_mod exceeds the actuator count");
        return sys;
    }
};

json misreg_json(const Misreg& m) { return json::array({m.dx, m.dy}); }

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

int cmd_geometry(const SystemArgs& sys_args, const std::string& out) {
    const SimulationPreset sys = sys_args.resolve();
    write_geometry_file(out, {sys.grid, sys.sub});
    std::cout << "wrote geometry (" << sys.grid.n_act() << " actuators, " << sys.sub.n_side
              << "x" << sys.sub.n_side << " subapertures) to " << out << "\n";
    return kExitOk;
}

int cmd_sim_im(const SystemArgs& sys_args, const std::string& shift_str, Real noise,
               Index modes, std::uint64_t seed, const std::string& out) {
    const SimulationPreset sys = sys_args.resolve();
    const Misreg shift = parse_misreg(shift_str);
    const Index n_modes =
        std::min<Index>(modes > 0 ? modes : sys.im_modes, sys.grid.n_act() - 1);
    const ModalBasis basis = build_kl_basis(sys.grid, n_modes);
    const Projector proj = phase_projector(sys.grid, sys.sub);
    const ModalIM im =
        build_modal_im(basis, proj, sys.sub, shift, noise, basis.n_modes(), seed);
    write_modal_im_file(out, im);
    std::cout << "wrote " << im.n_modes() << "-mode IM (shift " << shift.dx << "," << shift.dy
              << " delta, noise " << noise << ") to " << out << "\n";
    return kExitOk;
}

int cmd_sim_loop(const SystemArgs& sys_args, const std::string& misreg_str, Index frames,
                 std::uint64_t seed, bool no_turbulence, const std::string& out) {
    const SimulationPreset sys = sys_args.resolve();
    const Misreg misreg = parse_misreg(misreg_str);
    const LoopSystem plant =
        build_loop_system(sys.grid, sys.sub, sys.n_basis_modes, sys.loop.n_mod);
    std::optional<FrozenFlowScreen> screen;
    if (!no_turbulence && sys.turbulence)
        screen = make_screen_for(sys, detail::mix_seed(seed, 7));
    const Telemetry tel = run_loop(plant, sys.loop, misreg, sys.noise_sigma,
                                   screen ? &*screen : nullptr, frames, seed);
    write_telemetry_file(out, tel);
    std::cout << "wrote " << frames << " frames of telemetry to " << out << "\n";
    return kExitOk;
}

int cmd_estimate_2d(const std::string& measured_path, const std::string& reference_path,
                    Index radius, Index upsample, const std::string& json_out,
                    const std::string& map_csv) {
    const ModalIM measured = read_modal_im_file(measured_path);
    const ModalIM reference = read_modal_im_file(reference_path);
    const Index r = radius > 0 ? radius : std::max<Index>(1, measured.n_side / 4);
    const CorrMap map = correlation_map(measured, reference, r, upsample);

    json j;
    j["dx_delta"] = map.peak.dx;
    j["dy_delta"] = map.peak.dy;
    j["peak_value"] = map.peak_value;
    j["boundary_warning"] = map.boundary_warning;
    if (json_out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(json_out, j);
    if (!map_csv.empty()) {
        std::ofstream out(map_csv);
        write_corr_map_csv(out, map.values, 1.0 / static_cast<Real>(map.upsample));
    }
    return kExitOk;
}

int cmd_estimate_cl(const SystemArgs& sys_args, const std::string& telemetry_path,
                    Index segment, Real overlap, Real f_min, const std::string& json_out,
                    const std::string& rho2d_csv, const std::string& rhot_csv) {
    const SimulationPreset sys = sys_args.resolve();
    Telemetry tel = read_telemetry_file(telemetry_path);
    // flags/params file take precedence over the telemetry header
    if (!sys_args.params_file.empty() || sys_args.g_int_override > 0 ||
        sys_args.loop_hz_override > 0 || sys_args.n_mod_override > 0) {
        tel.params = sys.loop;
        tel.frame_rate = sys.loop.frame_rate();
    }
    const Projector proj_low = build_projector(sys.grid, 1.5);
    if (tel.n_act() != sys.grid.n_act())
        throw InputError("telemetry actuator count does not match the geometry");

    const SpectralSeries series = decompose(tel, proj_low, segment, overlap);
    SpectralCorr corr = empirical_corr(series);
    corr.k_ctrl = control_space(tel.params, sys.sub.pupil_diameter, corr.k_grid);
    const VectorXd r0 = rho0_curve(corr.f, tel.params);
    const ShiftEstimate est = fit_shift(corr, r0, sys.sub.sub_pitch_delta, f_min);

    json j;
    j["dx_delta"] = est.delta.dx;
    j["dy_delta"] = est.delta.dy;
    j["cov"] = {{est.covariance(0, 0), est.covariance(0, 1)},
                {est.covariance(1, 0), est.covariance(1, 1)}};
    j["residual_rms"] = est.residual_rms;
    j["n_segments"] = series.n_segments;
    if (json_out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(json_out, j);

    if (!rho2d_csv.empty()) {
        std::ofstream out(rho2d_csv);
        write_rho2d_csv(out, corr.k_grid, est.rho2d, corr.k_ctrl);
    }
    if (!rhot_csv.empty()) {
        std::ofstream out(rhot_csv);
        write_rhot_csv(out, corr.f, est.rhot, est.rhot_smoothed, r0);
    }
    return kExitOk;
}

int cmd_align(const SystemArgs& sys_args, const std::string& estimator,
              const std::string& misreg_str, Real gain, Index max_iter, Real tol,
              Index frames, std::uint64_t seed, const std::string& json_out) {
    const SimulationPreset sys = sys_args.resolve();
    const Misreg initial = parse_misreg(misreg_str);
    if (estimator != "open2d" && estimator != "closed")
        throw InputError("estimator must be open2d or closed");
    const EstimatorKind kind =
        estimator == "open2d" ? EstimatorKind::open2d : EstimatorKind::closed;
    if (gain <= 0) gain = kind == EstimatorKind::open2d ? 1.0 : 0.5;

    CorrectiveOptions opt;
    opt.frames = frames;
    const ConvergenceTrace trace =
        run_corrective_loop(sys, kind, initial, gain, max_iter, tol, seed, opt);

    json steps = json::array();
    for (const auto& s : trace.steps)
        steps.push_back({{"estimate", misreg_json(s.estimate)},
                         {"applied_correction", misreg_json(s.applied_correction)},
                         {"residual_truth", misreg_json(s.residual_truth)}});
    json j;
    j["estimator"] = estimator;
    j["gain"] = trace.gain;
    j["criterion_delta"] = trace.criterion;
    j["converged"] = trace.converged;
    j["iterations"] = steps;
    if (json_out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(json_out, j);
    return trace.converged ? kExitOk : kExitNonConvergence;
}

json sweep_to_json(const SweepReport& report) {
    json pts = json::array();
    for (const SweepPoint& p : report.points)
        pts.push_back({{"injected", misreg_json(p.injected)},
                       {"mean_estimate", misreg_json(p.mean_estimate)},
                       {"covariance",
                        {{p.covariance(0, 0), p.covariance(0, 1)},
                         {p.covariance(1, 0), p.covariance(1, 1)}}},
                       {"n_batches", p.n_batches},
                       {"unstable", p.unstable}});
    json j;
    j["points"] = std::move(pts);
    j["fit"] = {{"rho", report.fit.rho},
                {"alpha_deg", report.fit.alpha_deg},
                {"delta0", misreg_json(report.fit.delta0)},
                {"residual_rms", report.fit.residual_rms}};
    return j;
}

int cmd_sweep(const SystemArgs& sys_args, const std::string& estimator,
              std::vector<std::string>& shift_strs, Index batches, Index batch_len,
              Index stride, Real synth_rho, Real synth_alpha, std::uint64_t seed,
              const std::string& json_out) {
    const SimulationPreset sys = sys_args.resolve();
    std::vector<Misreg> shifts;
    for (const std::string& s : shift_strs) shifts.push_back(parse_misreg(s));
    if (shifts.empty())
        for (const Real s : {0.15, 0.3, 0.45, 0.6, 0.75, 0.9}) {
            shifts.push_back({s, 0.0});
            shifts.push_back({-s, 0.0});
            shifts.push_back({0.0, s});
            shifts.push_back({0.0, -s});
        }

    SweepBackend backend = EstimatorKind::closed;
    if (estimator == "open2d")
        backend = EstimatorKind::open2d;
    else if (estimator == "synthetic")
        backend = SyntheticBackend{synth_rho, synth_alpha, {}, 0.02};
    else if (estimator != "closed")
        throw InputError("estimator must be open2d, closed or synthetic");

    SweepOptions opt;
    opt.n_batches = batches;
    opt.batch_len = batch_len;
    opt.stride = stride;
    const SweepReport report = run_shift_sweep(sys, backend, shifts, opt, seed);

    const json j = sweep_to_json(report);
    if (json_out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(json_out, j);

    for (const SweepPoint& p : report.points)
        if (p.unstable) return kExitInstability;
    return kExitOk;
}

int cmd_report(const std::string& sweep_json, const std::string& json_out,
               const std::string& csv_out) {
    std::ifstream in(sweep_json);
    if (!in) throw InputError("cannot open '" + sweep_json + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError(std::string("sweep JSON parse error: ") + e.what());
    }

    std::vector<std::pair<Misreg, Misreg>> pairs;
    try {
        for (const auto& p : j.at("points")) {
            if (p.value("unstable", false)) continue;
            pairs.emplace_back(
                Misreg{p.at("injected").at(0), p.at("injected").at(1)},
                Misreg{p.at("mean_estimate").at(0), p.at("mean_estimate").at(1)});
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("sweep JSON schema error: ") + e.what());
    }
    const LinearTransformFit fit = fit_linear_transform(pairs);

    json out;
    out["n_points"] = pairs.size();
    out["fit"] = {{"rho", fit.rho},
                  {"alpha_deg", fit.alpha_deg},
                  {"delta0", misreg_json(fit.delta0)},
                  {"residual_rms", fit.residual_rms}};
    if (json_out.empty())
        std::cout << out.dump(2) << "\n";
    else
        write_json_file(json_out, out);

    if (!csv_out.empty()) {
        std::ofstream csv(csv_out);
        if (!csv) throw InputError("cannot open '" + csv_out + "' for writing");
        csv << "injected_dx,injected_dy,mean_dx,mean_dy,model_dx,model_dy\n";
        const Real a = fit.alpha_deg * std::numbers::pi / 180.0;
        for (const auto& [t, e] : pairs) {
            const Real mx = fit.rho * (fit.delta0.dx + std::cos(a) * t.dx - std::sin(a) * t.dy);
            const Real my = fit.rho * (fit.delta0.dy + std::sin(a) * t.dx + std::cos(a) * t.dy);
            csv << t.dx << "," << t.dy << "," << e.dx << "," << e.dy << "," << mx << "," << my
                << "\n";
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lateral DM/WFS misregistration estimators and simulation bench"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.fallthrough();  // lets subcommands inherit the global flags

    SystemArgs geo_args;
    std::string geo_out = "geometry.json";
    auto* geo = app.add_subcommand("geometry", "export a system geometry as JSON");
    geo_args.attach(geo);
    geo->add_option("--out", geo_out, "output JSON path");

    SystemArgs simim_args;
    std::string simim_shift = "0,0", simim_out;
    Real simim_noise = 0.0;
    Index simim_modes = 0;
    auto* simim = app.add_subcommand("sim-im", "measure a modal interaction matrix");
    simim_args.attach(simim);
    simim->add_option("--shift", simim_shift, "injected lateral shift dx,dy (delta units)");
    simim->add_option("--noise", simim_noise, "slope noise sigma");
    simim->add_option("--modes", simim_modes, "number of KL modes");
    simim->add_option("--out", simim_out, "output MIM1 path")->required();

    SystemArgs simloop_args;
    std::string simloop_misreg = "0,0", simloop_out;
    Index simloop_frames = 10000;
    bool simloop_noturb = false;
    auto* simloop = app.add_subcommand("sim-loop", "run the closed-loop simulator");
    simloop_args.attach(simloop);
    simloop->add_option("--misreg", simloop_misreg, "injected misregistration dx,dy (delta)");
    simloop->add_option("--frames", simloop_frames, "telemetry length");
    simloop->add_flag("--no-turbulence", simloop_noturb, "disable the frozen-flow screen");
    simloop->add_option("--out", simloop_out, "output TLM1 path")->required();

    std::string e2d_measured, e2d_reference, e2d_json, e2d_map;
    Index e2d_radius = 0, e2d_upsample = 8;
    auto* e2d = app.add_subcommand("estimate-2d", "open-loop 2D modal estimator");
    e2d->add_option("--measured", e2d_measured, "measured IM (MIM1)")->required();
    e2d->add_option("--reference", e2d_reference, "reference IM (MIM1)")->required();
    e2d->add_option("--radius", e2d_radius, "search radius in cells (default n/4)");
    e2d->add_option("--upsample", e2d_upsample, "super-resolution factor");
    e2d->add_option("--json", e2d_json, "output JSON path (stdout if omitted)");
    e2d->add_option("--dump-map", e2d_map, "correlation surface CSV");

    SystemArgs ecl_args;
    std::string ecl_tel, ecl_json, ecl_rho2d, ecl_rhot;
    Index ecl_segment = 512;
    Real ecl_overlap = 0.5, ecl_fmin = 0.0;
    auto* ecl = app.add_subcommand("estimate-cl", "closed-loop telemetry estimator");
    ecl_args.attach(ecl);
    ecl->add_option("--telemetry", ecl_tel, "telemetry file (TLM1)")->required();
    ecl->add_option("--segment", ecl_segment, "Welch segment length");
    ecl->add_option("--overlap", ecl_overlap, "Welch overlap fraction");
    ecl->add_option("--fmin", ecl_fmin, "low-frequency exclusion (Hz)");
    ecl->add_option("--json", ecl_json, "output JSON path (stdout if omitted)");
    ecl->add_option("--dump-rho2d", ecl_rho2d, "coupling-coefficient map CSV");
    ecl->add_option("--dump-rhot", ecl_rhot, "temporal correlation curve CSV");

    SystemArgs align_args;
    std::string align_estimator = "closed", align_misreg = "0,0", align_json;
    Real align_gain = 0.0, align_tol = 0.05;
    Index align_iter = 20, align_frames = 2500;
    auto* align = app.add_subcommand("align", "corrective alignment loop");
    align_args.attach(align);
    align->add_option("--estimator", align_estimator, "open2d or closed");
    align->add_option("--misreg", align_misreg, "initial misregistration dx,dy (delta)");
    align->add_option("--gain", align_gain, "corrective gain (default 1.0 / 0.5)");
    align->add_option("--max-iter", align_iter, "iteration budget");
    align->add_option("--tol", align_tol, "convergence tolerance (delta)");
    align->add_option("--frames", align_frames, "telemetry frames per iteration");
    align->add_option("--json", align_json, "trace JSON path (stdout if omitted)");

    SystemArgs sweep_args;
    std::string sweep_estimator = "synthetic", sweep_json_path;
    std::vector<std::string> sweep_shifts;
    Index sweep_batches = 31, sweep_batch_len = 2500, sweep_stride = 250;
    Real sweep_rho = 0.5, sweep_alpha = 0.0;
    auto* sweep = app.add_subcommand("sweep", "shift-sweep protocol");
    sweep_args.attach(sweep);
    sweep->add_option("--estimator", sweep_estimator, "open2d, closed or synthetic");
    sweep->add_option("--shift", sweep_shifts, "injected shift dx,dy (repeatable)");
    sweep->add_option("--batches", sweep_batches, "batches per shift");
    sweep->add_option("--batch-len", sweep_batch_len, "frames per batch");
    sweep->add_option("--stride", sweep_stride, "frames between batch starts");
    sweep->add_option("--synthetic-rho", sweep_rho, "synthetic backend sensitivity");
    sweep->add_option("--synthetic-alpha", sweep_alpha, "synthetic backend clocking (deg)");
    sweep->add_option("--json", sweep_json_path, "report JSON path (stdout if omitted)");

    std::string report_in, report_json, report_csv;
    auto* report = app.add_subcommand("report", "fit a sweep report (scale/rotation/offset)");
    report->add_option("--sweep", report_in, "sweep JSON produced by the sweep command")
        ->required();
    report->add_option("--json", report_json, "fit JSON path (stdout if omitted)");
    report->add_option("--csv", report_csv, "plot-data CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (geo->parsed()) return cmd_geometry(geo_args, geo_out);
        if (simim->parsed())
            return cmd_sim_im(simim_args, simim_shift, simim_noise, simim_modes, seed, simim_out);
        if (simloop->parsed())
            return cmd_sim_loop(simloop_args, simloop_misreg, simloop_frames, seed,
                                simloop_noturb, simloop_out);
        if (e2d->parsed())
            return cmd_estimate_2d(e2d_measured, e2d_reference, e2d_radius, e2d_upsample,
                                   e2d_json, e2d_map);
        if (ecl->parsed())
            return cmd_estimate_cl(ecl_args, ecl_tel, ecl_segment, ecl_overlap, ecl_fmin,
                                   ecl_json, ecl_rho2d, ecl_rhot);
        if (align->parsed())
            return cmd_align(align_args, align_estimator, align_misreg, align_gain, align_iter,
                             align_tol, align_frames, seed, align_json);
        if (sweep->parsed())
            return cmd_sweep(sweep_args, sweep_estimator, sweep_shifts, sweep_batches,
                             sweep_batch_len, sweep_stride, sweep_rho, sweep_alpha, seed,
                             sweep_json_path);
        if (report->parsed()) return cmd_report(report_in, report_json, report_csv);
    } catch (const InstabilityError& e) {
        std::cerr << "instability: " << e.what() << "\n";
        return kExitInstability;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return kExitOk;
}
