#include "xspod/geometry.hpp"

#include <cmath>

namespace xspod {

void AcquisitionGeometry::validate() const
{
    if (!(sod > 0.0) || !(sdd > sod))
        throw ValidationError("geometry: require 0 < sod < sdd");
    if (!(pixel_pitch > 0.0) || n_cols < 1 || n_rows < 1)
        throw ValidationError("geometry: pixel pitch and pixel counts must be positive");
    if (!(det_width > 0.0) || !(det_height > 0.0))
        throw ValidationError("geometry: detector extent must be positive");
    if (std::abs(n_cols * pixel_pitch - det_width) > pixel_pitch
        || std::abs(n_rows * pixel_pitch - det_height) > pixel_pitch)
        throw ValidationError("geometry: pixel grid does not match detector extent within one pitch");
}

Vec3 AcquisitionGeometry::pixel_point(int col, int row, double fx, double fy) const
{
    const double x = (col + fx - 0.5 * n_cols) * pixel_pitch;
    const double z = (0.5 * n_rows - row - fy) * pixel_pitch;
    return {x, detector_y(), z};
}

Vec3 AcquisitionGeometry::pixel_center(int col, int row) const
{
    return pixel_point(col, row, 0.5, 0.5);
}

std::optional<AcquisitionGeometry::Pixel> AcquisitionGeometry::pixel_of(double x, double z) const
{
    const double u = x / pixel_pitch + 0.5 * n_cols;
    const double v = 0.5 * n_rows - z / pixel_pitch;
    if (!(u >= 0.0) || !(v >= 0.0) || u >= n_cols || v >= n_rows)
        return std::nullopt;
    return Pixel{static_cast<int>(u), static_cast<int>(v)};
}

} // namespace xspod
