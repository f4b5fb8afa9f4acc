#ifndef MISREG_TYPES_HPP
#define MISREG_TYPES_HPP

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace misreg {

using Real = double;
using Complex = std::complex<Real>;

using Eigen::Index;
using Map2D = Eigen::ArrayXXd;   // (row, col) = (y, x)
using Mask2D = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Eigen::ArrayXd;
using Eigen::ArrayXXcd;
using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// Lateral DM/WFS misregistration in units of the subaperture pitch.
/// Positive (dx, dy) translates the measured slope pattern toward +x/+y;
/// both estimators report the same sign.
struct Misreg {
    Real dx = 0.0;
    Real dy = 0.0;

    Real norm() const { return std::hypot(dx, dy); }
    Misreg operator+(const Misreg& o) const { return {dx + o.dx, dy + o.dy}; }
    Misreg operator-(const Misreg& o) const { return {dx - o.dx, dy - o.dy}; }
    Misreg operator*(Real s) const { return {dx * s, dy * s}; }
    Misreg operator-() const { return {-dx, -dy}; }
};

/// A square raster of physical extent `extent` (meters), centered on the
/// optical axis. Pixel (i, j) is centered at origin() + (j + 0.5, i + 0.5) * pixel().
struct Raster {
    Map2D values;
    Real extent = 0.0;

    Index n() const { return values.rows(); }
    Real pixel() const { return extent / static_cast<Real>(values.rows()); }
    Real origin() const { return -extent / 2.0; }
};

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateGeometryError : Error {
    using Error::Error;
};
struct EmptyMaskError : Error {
    using Error::Error;
};
struct NoOverlapError : Error {
    using Error::Error;
};
struct DegenerateFitError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};

struct InstabilityError : Error {
    Index frame;
    InstabilityError(const std::string& what, Index frame_) : Error(what), frame(frame_) {}
};

namespace detail {

/// splitmix64, used to derive independent per-mode/per-shift seed streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

}  // namespace misreg

#endif
