#include "misreg/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace misreg {

namespace {

using nlohmann::json;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& out, Real v) {
    static_assert(sizeof(Real) == 8);
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

Real read_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    Real v;
    std::memcpy(&v, &u, 8);
    return v;
}

void write_map(std::ostream& out, const Map2D& m) {
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
}

Map2D read_map(std::istream& in, Index rows, Index cols) {
    Map2D m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = read_f64(in);
    return m;
}

void write_mask(std::ostream& out, const Mask2D& m) {
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out.put(m(i, j) ? 1 : 0);
}

Mask2D read_mask(std::istream& in, Index rows, Index cols) {
    Mask2D m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = in.get() != 0;
    return m;
}

void expect_magic(std::istream& in, const char* magic) {
    char buf[5] = {};
    in.read(buf, 4);
    if (!in || std::strncmp(buf, magic, 4) != 0)
        throw InputError(std::string("bad magic, expected ") + magic);
}

template <typename F>
auto with_input_file(const std::string& path, F&& f) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    return f(in);
}

template <typename F>
void with_output_file(const std::string& path, F&& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    f(out);
    if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace

GeometryFile read_geometry_json(std::istream& in) {
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError(std::string("geometry JSON parse error: ") + e.what());
    }
    GeometryFile g;
    const std::string layout = j.at("layout").get<std::string>();
    if (layout == "cartesian")
        g.grid.layout = DmLayout::cartesian;
    else if (layout == "hexagonal")
        g.grid.layout = DmLayout::hexagonal;
    else
        throw InputError("geometry: unknown layout '" + layout + "'");

    g.grid.pitch = j.at("pitch_m").get<Real>();
    g.grid.clear_aperture_diameter = j.at("clear_aperture_m").get<Real>();
    const auto& pos = j.at("positions");
    g.grid.positions.resize(static_cast<Index>(pos.size()), 2);
    for (Index i = 0; i < g.grid.positions.rows(); ++i) {
        g.grid.positions(i, 0) = pos[static_cast<std::size_t>(i)].at(0).get<Real>();
        g.grid.positions(i, 1) = pos[static_cast<std::size_t>(i)].at(1).get<Real>();
    }

    const Index n_side = j.at("n_side").get<Index>();
    g.sub = build_subaperture_grid(n_side, j.at("pupil_diameter_m").get<Real>(),
                                   j.value("central_obscuration", 0.0));
    if (j.contains("wfs_mask")) {
        const auto& m = j.at("wfs_mask");
        if (static_cast<Index>(m.size()) != n_side * n_side)
            throw InputError("geometry: wfs_mask size mismatch");
        for (Index iy = 0; iy < n_side; ++iy)
            for (Index ix = 0; ix < n_side; ++ix)
                g.sub.wfs_mask(iy, ix) = m[static_cast<std::size_t>(iy * n_side + ix)].get<int>() != 0;
    }
    return g;
}

void write_geometry_json(std::ostream& out, const GeometryFile& g) {
    json j;
    j["layout"] = g.grid.layout == DmLayout::cartesian ? "cartesian" : "hexagonal";
    j["pitch_m"] = g.grid.pitch;
    j["clear_aperture_m"] = g.grid.clear_aperture_diameter;
    json pos = json::array();
    for (Index i = 0; i < g.grid.positions.rows(); ++i)
        pos.push_back({g.grid.positions(i, 0), g.grid.positions(i, 1)});
    j["positions"] = std::move(pos);
    j["n_side"] = g.sub.n_side;
    j["pupil_diameter_m"] = g.sub.pupil_diameter;
    j["central_obscuration"] = g.sub.central_obscuration;
    json mask = json::array();
    for (Index iy = 0; iy < g.sub.n_side; ++iy)
        for (Index ix = 0; ix < g.sub.n_side; ++ix) mask.push_back(g.sub.wfs_mask(iy, ix) ? 1 : 0);
    j["wfs_mask"] = std::move(mask);
    out << j.dump(2) << "\n";
}

GeometryFile read_geometry_file(const std::string& path) {
    return with_input_file(path, [](std::istream& in) { return read_geometry_json(in); });
}

void write_geometry_file(const std::string& path, const GeometryFile& g) {
    with_output_file(path, [&](std::ostream& out) { write_geometry_json(out, g); });
}

LoopParams read_loop_params_json(std::istream& in) {
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError(std::string("loop params JSON parse error: ") + e.what());
    }
    LoopParams p = LoopParams::from_rate(j.at("loop_hz").get<Real>(), j.at("g_int").get<Real>(),
                                         j.value("g_leak", 0.0), j.at("n_mod").get<Index>());
    if (j.contains("tau_wfs")) p.tau_wfs = j.at("tau_wfs").get<Real>();
    if (j.contains("tau_lat")) p.tau_lat = j.at("tau_lat").get<Real>();
    if (j.contains("tau_dm")) p.tau_dm = j.at("tau_dm").get<Real>();
    if (p.tau_rtc <= 0 || p.tau_wfs <= 0 || p.tau_lat <= 0 || p.tau_dm <= 0)
        throw InputError("loop params: characteristic times must be > 0");
    if (p.g_int <= 0 || p.g_int > 1 || p.g_leak < 0 || p.g_leak >= 1)
        throw InputError("loop params: need 0 < g_int <= 1 and 0 <= g_leak < 1");
    return p;
}

void write_loop_params_json(std::ostream& out, const LoopParams& p) {
    json j;
    j["loop_hz"] = p.frame_rate();
    j["g_int"] = p.g_int;
    j["g_leak"] = p.g_leak;
    j["n_mod"] = p.n_mod;
    j["tau_wfs"] = p.tau_wfs;
    j["tau_lat"] = p.tau_lat;
    j["tau_dm"] = p.tau_dm;
    out << j.dump(2) << "\n";
}

LoopParams read_loop_params_file(const std::string& path) {
    return with_input_file(path, [](std::istream& in) { return read_loop_params_json(in); });
}

void write_loop_params_file(const std::string& path, const LoopParams& p) {
    with_output_file(path, [&](std::ostream& out) { write_loop_params_json(out, p); });
}

void write_modal_im(std::ostream& out, const ModalIM& im) {
    out.write("MIM1", 4);
    write_u32(out, static_cast<std::uint32_t>(im.n_modes()));
    write_u32(out, static_cast<std::uint32_t>(im.n_side));
    write_f64(out, im.sub_pitch_delta);
    write_mask(out, im.wfs_mask);
    write_mask(out, im.valid);
    for (const Map2D& m : im.slopes_x) write_map(out, m);
    for (const Map2D& m : im.slopes_y) write_map(out, m);
}

ModalIM read_modal_im(std::istream& in) {
    expect_magic(in, "MIM1");
    ModalIM im;
    const Index n_modes = static_cast<Index>(read_u32(in));
    im.n_side = static_cast<Index>(read_u32(in));
    im.sub_pitch_delta = read_f64(in);
    if (!in || n_modes <= 0 || im.n_side <= 0) throw InputError("MIM1: corrupt header");
    im.wfs_mask = read_mask(in, im.n_side, im.n_side);
    im.valid = read_mask(in, im.n_side, im.n_side);
    for (Index m = 0; m < n_modes; ++m) im.slopes_x.push_back(read_map(in, im.n_side, im.n_side));
    for (Index m = 0; m < n_modes; ++m) im.slopes_y.push_back(read_map(in, im.n_side, im.n_side));
    if (!in) throw InputError("MIM1: truncated file");
    return im;
}

ModalIM read_modal_im_file(const std::string& path) {
    return with_input_file(path, [](std::istream& in) { return read_modal_im(in); });
}

void write_modal_im_file(const std::string& path, const ModalIM& im) {
    with_output_file(path, [&](std::ostream& out) { write_modal_im(out, im); });
}

void write_telemetry(std::ostream& out, const Telemetry& t) {
    out.write("TLM1", 4);
    write_u32(out, static_cast<std::uint32_t>(t.frames()));
    write_u32(out, static_cast<std::uint32_t>(t.n_act()));
    write_f64(out, t.frame_rate);
    write_f64(out, t.params.g_int);
    write_f64(out, t.params.g_leak);
    write_f64(out, t.params.tau_wfs);
    write_f64(out, t.params.tau_rtc);
    write_f64(out, t.params.tau_lat);
    write_f64(out, t.params.tau_dm);
    write_u32(out, static_cast<std::uint32_t>(t.params.n_mod));
    write_f64(out, t.injected.dx);
    write_f64(out, t.injected.dy);
    for (Index i = 0; i < t.frames(); ++i)
        for (Index a = 0; a < t.n_act(); ++a) write_f64(out, t.commands(i, a));
}

Telemetry read_telemetry(std::istream& in) {
    expect_magic(in, "TLM1");
    Telemetry t;
    const Index frames = static_cast<Index>(read_u32(in));
    const Index n_act = static_cast<Index>(read_u32(in));
    t.frame_rate = read_f64(in);
    t.params.g_int = read_f64(in);
    t.params.g_leak = read_f64(in);
    t.params.tau_wfs = read_f64(in);
    t.params.tau_rtc = read_f64(in);
    t.params.tau_lat = read_f64(in);
    t.params.tau_dm = read_f64(in);
    t.params.n_mod = static_cast<Index>(read_u32(in));
    t.injected.dx = read_f64(in);
    t.injected.dy = read_f64(in);
    if (!in || frames < 2 || n_act <= 0) throw InputError("TLM1: corrupt header");
    t.commands.resize(frames, n_act);
    for (Index i = 0; i < frames; ++i)
        for (Index a = 0; a < n_act; ++a) t.commands(i, a) = read_f64(in);
    if (!in) throw InputError("TLM1: truncated file");
    return t;
}

Telemetry read_telemetry_file(const std::string& path) {
    return with_input_file(path, [](std::istream& in) { return read_telemetry(in); });
}

void write_telemetry_file(const std::string& path, const Telemetry& t) {
    with_output_file(path, [&](std::ostream& out) { write_telemetry(out, t); });
}

void write_corr_map_csv(std::ostream& out, const Map2D& values, Real scale_per_cell) {
    out << "dx_delta,dy_delta,alpha\n";
    const Index r = values.rows() / 2;
    for (Index iy = 0; iy < values.rows(); ++iy)
        for (Index ix = 0; ix < values.cols(); ++ix)
            out << static_cast<Real>(ix - r) * scale_per_cell << ","
                << static_cast<Real>(iy - r) * scale_per_cell << "," << values(iy, ix) << "\n";
}

void write_rho2d_csv(std::ostream& out, const Eigen::Matrix<Real, Eigen::Dynamic, 2>& k_grid,
                     const VectorXd& rho2d, const MaskX& k_ctrl) {
    out << "kx,ky,rho2d,in_ctrl\n";
    for (Index i = 0; i < k_grid.rows(); ++i)
        out << k_grid(i, 0) << "," << k_grid(i, 1) << "," << rho2d(i) << ","
            << (k_ctrl.size() == k_grid.rows() && k_ctrl(i) ? 1 : 0) << "\n";
}

void write_rhot_csv(std::ostream& out, const VectorXd& f, const VectorXd& rhot,
                    const VectorXd& rhot_smoothed, const VectorXd& rho0) {
    out << "f_hz,rhot,rhot_smoothed,rho0\n";
    for (Index i = 0; i < f.size(); ++i)
        out << f(i) << "," << rhot(i) << "," << rhot_smoothed(i) << "," << rho0(i) << "\n";
}

}  // namespace misreg
