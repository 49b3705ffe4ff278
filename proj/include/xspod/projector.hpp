#pragma once

#include "xspod/core.hpp"
#include "xspod/geometry.hpp"
#include "xspod/phantom.hpp"
#include "xspod/physics.hpp"

#include <cmath>
#include <cstdint>

namespace xspod {

/// Counts substituted for zero before taking the logarithm.
inline constexpr double kZeroCountClamp = 0.5;

struct ProjectorOptions {
    int supersampling = 1; ///< sub-rays per pixel side
    int workers = 1;
};

struct Projection {
    RasterF expected_counts;
    RasterF transmission;
};

/// Noise-free polychromatic cone-beam projection, one ray per pixel centre
/// (or supersampling^2 sub-rays). expected_counts = transmission * flatfield.
Projection forward_project(const Phantom& phantom, const AcquisitionGeometry& geometry,
                           const Spectrum& spectrum, const Material& material,
                           const RasterF& flatfield, const ProjectorOptions& options = {});

/// Same, with a constant flatfield value per pixel.
Projection forward_project(const Phantom& phantom, const AcquisitionGeometry& geometry,
                           const Spectrum& spectrum, const Material& material,
                           double flatfield_value = 1.0, const ProjectorOptions& options = {});

/// Pixel is set iff its centre ray has a positive cavity chord.
Mask ground_truth_mask(const Phantom& phantom, const AcquisitionGeometry& geometry);

/// Pixel is set iff its centre ray crosses the cylinder.
Mask silhouette_mask(const Phantom& phantom, const AcquisitionGeometry& geometry);

/// Flatfield-corrected log image: -ln(counts / flatfield), zero counts clamped
/// to kZeroCountClamp.
template <typename Scalar>
RasterF preprocess(const Raster<Scalar>& counts, const RasterF& flatfield)
{
    if (counts.rows() != flatfield.rows() || counts.cols() != flatfield.cols())
        throw ValidationError("preprocess: counts and flatfield dimensions differ");
    if (!(flatfield > 0.0f).all())
        throw ValidationError("preprocess: flatfield must be positive everywhere");
    RasterF out(counts.rows(), counts.cols());
    for (Eigen::Index i = 0; i < counts.size(); ++i) {
        double c = static_cast<double>(counts.data()[i]);
        if (c <= 0.0)
            c = kZeroCountClamp;
        out.data()[i] = static_cast<float>(-std::log(c / static_cast<double>(flatfield.data()[i])));
    }
    return out;
}

/// Independent Poisson draw per pixel, deterministic for a fixed seed.
CountRaster apply_poisson_noise(const RasterF& expected, std::uint64_t seed);

} // namespace xspod
