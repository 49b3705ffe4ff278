#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xspod {

using Vec3 = Eigen::Vector3d;

/// Row-major image grid; row index first, column index second.
template <typename Scalar>
using Raster = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RasterF = Raster<float>;
using CountRaster = Raster<std::int64_t>;
using Mask = Raster<std::uint8_t>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad input data or parameters. CLI exit code 2.
struct ValidationError : Error {
    using Error::Error;
};

/// File system or stream failure. CLI exit code 3.
struct IoError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

inline constexpr const char* kVersion = "xspod 0.3.0";

} // namespace xspod
