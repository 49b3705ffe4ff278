#pragma once

#include "xspod/core.hpp"

#include <optional>

namespace xspod {

/// Cone-beam acquisition layout.
///
/// World frame: the rotation axis (and cylinder axis) is z, through the
/// origin. The point source sits at (0, -sod, 0) and the beam travels along
/// +y. The flat detector is the plane y = sdd - sod, centred on the beam
/// axis; columns run along +x and rows run along -z (row 0 at the top).
struct AcquisitionGeometry {
    double sod = 200.0;
    double sdd = 300.0;
    double det_width = 75.0;
    double det_height = 82.5;
    double pixel_pitch = 0.3;
    int n_cols = 250;
    int n_rows = 275;

    /// Throws ValidationError when an invariant is violated.
    void validate() const;

    double magnification() const { return sdd / sod; }
    double detector_y() const { return sdd - sod; }
    Vec3 source() const { return {0.0, -sod, 0.0}; }
    double pixel_area() const { return pixel_pitch * pixel_pitch; }
    double detector_area() const { return det_width * det_height; }

    Vec3 pixel_center(int col, int row) const;

    /// Sub-pixel position; (fx, fy) in [0, 1) measured from the pixel's
    /// left/top edge.
    Vec3 pixel_point(int col, int row, double fx, double fy) const;

    struct Pixel {
        int col;
        int row;
    };

    /// Pixel containing a detector-plane point, if inside the pixel grid.
    std::optional<Pixel> pixel_of(double x, double z) const;

    bool operator==(const AcquisitionGeometry&) const = default;
};

} // namespace xspod
